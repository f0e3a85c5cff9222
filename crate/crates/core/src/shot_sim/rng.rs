//! Counter-based per-shot random substreams.
//!
//! A ChaCha8 key is derived from the run seed and every `(shot, channel)` pair
//! selects its own ChaCha stream id. Any shot can therefore be regenerated on its
//! own, in any order and on any worker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random channels consumed by one shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    Emission = 0,
    AdditiveNoise = 1,
    Dephasing = 2,
    CorrelatedPhase = 3,
}

const CHANNELS: u64 = 4;

pub fn substream(seed: u64, shot_index: u64, channel: Channel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(
        shot_index
            .wrapping_mul(CHANNELS)
            .wrapping_add(channel as u64),
    );
    rng
}
