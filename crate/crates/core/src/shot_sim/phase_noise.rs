use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of correlated phase process added on top of the dephasing walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseNoiseModel {
    #[default]
    None,
    /// Independent Gaussian phase jitter at every sample.
    White,
    /// Stationary Ornstein-Uhlenbeck process.
    OrnsteinUhlenbeck,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseNoiseConfig {
    pub model: PhaseNoiseModel,
    /// Standard deviation of the phase process in radians.
    #[serde(default)]
    pub rms_amplitude: f64,
    /// Correlation time in ns (Ornstein-Uhlenbeck only).
    #[serde(default)]
    pub correlation_time: f64,
}

impl PhaseNoiseConfig {
    pub fn none() -> Self {
        PhaseNoiseConfig::default()
    }

    pub fn white(rms_amplitude: f64) -> Self {
        PhaseNoiseConfig {
            model: PhaseNoiseModel::White,
            rms_amplitude,
            correlation_time: 0.0,
        }
    }

    pub fn ornstein_uhlenbeck(rms_amplitude: f64, correlation_time: f64) -> Self {
        PhaseNoiseConfig {
            model: PhaseNoiseModel::OrnsteinUhlenbeck,
            rms_amplitude,
            correlation_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rms_amplitude >= 0.0 && self.rms_amplitude.is_finite()) {
            return Err(Error::config(format!(
                "phase-noise rms must be non-negative, got {}",
                self.rms_amplitude
            )));
        }
        if self.model == PhaseNoiseModel::OrnsteinUhlenbeck
            && !(self.correlation_time > 0.0 && self.correlation_time.is_finite())
        {
            return Err(Error::config(format!(
                "Ornstein-Uhlenbeck correlation time must be positive, got {}",
                self.correlation_time
            )));
        }
        Ok(())
    }

    pub(crate) fn is_active(&self) -> bool {
        self.model != PhaseNoiseModel::None && self.rms_amplitude > 0.0
    }
}

/// Samples `length` points of the configured phase process at spacing `dt`.
///
/// The Ornstein-Uhlenbeck path starts from its stationary law and is advanced
/// with the exact AR(1) update, so its autocovariance is
/// `rms^2 exp(-lag / correlation_time)` at every lag on the grid.
pub fn correlated_phase_path<R: Rng + ?Sized>(
    config: &PhaseNoiseConfig,
    dt: f64,
    length: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut path = vec![0.0; length];
    fill_phase_path(config, dt, &mut path, rng);
    path
}

pub(crate) fn fill_phase_path<R: Rng + ?Sized>(
    config: &PhaseNoiseConfig,
    dt: f64,
    path: &mut [f64],
    rng: &mut R,
) {
    let sigma = config.rms_amplitude;
    if !config.is_active() {
        path.fill(0.0);
        return;
    }
    match config.model {
        PhaseNoiseModel::None => unreachable!(),
        PhaseNoiseModel::White => {
            for x in path.iter_mut() {
                *x = sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        PhaseNoiseModel::OrnsteinUhlenbeck => {
            let decay = (-dt / config.correlation_time).exp();
            let kick = sigma * (1.0 - decay * decay).sqrt();
            let mut x = sigma * rng.sample::<f64, _>(StandardNormal);
            for slot in path.iter_mut() {
                *slot = x;
                x = decay * x + kick * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}
