//! Monte-Carlo generator of single-shot IQ records.
//!
//! Each shot is `X * A0 * sin(theta(t)) * exp(-max(0, t - t_end) / 2T1) * exp(i(phi_drive - pi/2 + dphi(t)))`
//! plus drive leakage and complex white Gaussian noise, where `X ~ Bernoulli(p)`,
//! `theta(t)` is the pulse area accumulated so far and `dphi` is the emitter phase
//! noise measured from the pulse onset (dephasing walk plus the correlated process).

pub mod phase_noise;
pub mod rng;

use std::f64::consts::FRAC_PI_2;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::{
    partial_pulse_area, wavepacket_envelope, DecoherenceParams, DrivePulse, DEFAULT_AREA_STEP,
};
use crate::error::{Error, Result};
pub use phase_noise::{correlated_phase_path, PhaseNoiseConfig, PhaseNoiseModel};
use rng::{substream, Channel};

/// Upper bound on the in-memory size of a simulated ensemble.
pub const MAX_ENSEMBLE_BYTES: u64 = 8 << 30;

fn default_shot_spacing() -> f64 {
    4000.0
}

/// Everything needed to synthesise an ensemble of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Sample period `dt` in ns.
    pub sample_period: f64,
    /// Samples per record.
    pub record_length: usize,
    /// Time between record start and pulse start, in ns.
    pub pre_drive_time: f64,
    pub pulse: DrivePulse,
    /// When set, the pulse amplitude is rescaled so its area equals this angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_theta: Option<f64>,
    pub decoherence: DecoherenceParams,
    /// Single-shot emission probability `p`.
    pub emission_probability: f64,
    /// Coherent field amplitude `A0` for `|sin theta| = 1` at the wavepacket start.
    pub signal_amplitude: f64,
    /// Total complex noise variance per sample (`sigma_N / 2` per quadrature).
    pub noise_sigma: f64,
    #[serde(default)]
    pub phase_noise: PhaseNoiseConfig,
    /// Number of shots `N`.
    pub shots: usize,
    pub seed: u64,
    /// Repetition period in ns; metadata only.
    #[serde(default = "default_shot_spacing")]
    pub shot_spacing: f64,
    /// Drive leakage into the record, as a fraction of the drive envelope.
    #[serde(default)]
    pub crosstalk: f64,
    /// Linear readout phase drift in rad/ns, applied from the pulse onset.
    #[serde(default)]
    pub phase_drift_rate: f64,
}

impl SimConfig {
    /// Acquisition matching the experiment: 1 ns sampling, 180 ns record with
    /// 20 ns before a 16 ns pulse, `T1 = 20.5 ns`, no pure dephasing.
    pub fn standard(theta: f64) -> Result<Self> {
        Ok(SimConfig {
            sample_period: 1.0,
            record_length: 180,
            pre_drive_time: 20.0,
            pulse: DrivePulse::standard(theta)?,
            target_theta: None,
            decoherence: DecoherenceParams::new(20.5, f64::INFINITY, 0.0)?,
            emission_probability: 1.0,
            signal_amplitude: 0.06,
            noise_sigma: 1.0,
            phase_noise: PhaseNoiseConfig::none(),
            shots: 50_000,
            seed: 7,
            shot_spacing: default_shot_spacing(),
            crosstalk: 0.0,
            phase_drift_rate: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dt = self.sample_period;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("sample period must be positive, got {dt}")));
        }
        if self.record_length == 0 {
            return Err(Error::config("record length must be at least one sample"));
        }
        if self.shots == 0 {
            return Err(Error::config("at least one shot is required"));
        }
        if !(self.pre_drive_time >= 0.0 && self.pre_drive_time.is_finite()) {
            return Err(Error::config("pre-drive time must be non-negative"));
        }
        self.pulse.validate()?;
        if let Some(theta) = self.target_theta {
            if !(theta >= 0.0 && theta.is_finite()) {
                return Err(Error::config(format!("target theta must be non-negative, got {theta}")));
            }
        }
        self.decoherence.validate()?;
        self.phase_noise.validate()?;
        let p = self.emission_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("emission probability must lie in [0, 1], got {p}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise variance must be non-negative"));
        }
        for (name, v) in [
            ("signal amplitude", self.signal_amplitude),
            ("crosstalk", self.crosstalk),
            ("phase drift rate", self.phase_drift_rate),
            ("shot spacing", self.shot_spacing),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        let record = self.record_length as f64 * dt;
        if record <= self.pulse_end() {
            return Err(Error::config(format!(
                "a {record} ns record does not extend past the pulse end at {} ns",
                self.pulse_end()
            )));
        }
        Ok(())
    }

    /// The drive pulse with `target_theta` applied.
    pub fn effective_pulse(&self) -> Result<DrivePulse> {
        match self.target_theta {
            Some(theta) => self.pulse.with_area(theta, DEFAULT_AREA_STEP),
            None => Ok(self.pulse),
        }
    }

    pub fn pulse_start(&self) -> f64 {
        self.pre_drive_time
    }

    pub fn pulse_end(&self) -> f64 {
        self.pre_drive_time + self.pulse.duration
    }

    pub fn sample_time(&self, k: usize) -> f64 {
        k as f64 * self.sample_period
    }

    fn ensemble_bytes(&self) -> Option<u64> {
        (self.shots as u64)
            .checked_mul(self.record_length as u64)?
            .checked_mul(std::mem::size_of::<Complex32>() as u64)
    }
}

/// Borrowed view of one record.
#[derive(Debug, Clone, Copy)]
pub struct TraceView<'a> {
    pub samples: &'a [Complex32],
    pub start_time: f64,
    pub dt: f64,
}

impl TraceView<'_> {
    pub fn time(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.dt
    }
}

/// One simulated record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<Complex32>,
    pub start_time: f64,
    pub dt: f64,
}

impl Trace {
    pub fn view(&self) -> TraceView<'_> {
        TraceView {
            samples: &self.samples,
            start_time: self.start_time,
            dt: self.dt,
        }
    }
}

/// Output of [`simulate_shot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub trace: Trace,
    pub emitted: bool,
}

/// `N` records sharing one time axis, stored shot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    data: Vec<Complex32>,
    samples_per_shot: usize,
    dt: f64,
    start_time: f64,
    emission_flags: Option<Vec<bool>>,
    config: Option<SimConfig>,
}

impl TraceSet {
    pub fn from_parts(
        data: Vec<Complex32>,
        samples_per_shot: usize,
        dt: f64,
        start_time: f64,
        emission_flags: Option<Vec<bool>>,
        config: Option<SimConfig>,
    ) -> Result<Self> {
        if samples_per_shot == 0 || data.is_empty() || !data.len().is_multiple_of(samples_per_shot) {
            return Err(Error::domain(format!(
                "{} samples do not form whole records of {samples_per_shot}",
                data.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) || !start_time.is_finite() {
            return Err(Error::domain("trace timing must be finite with dt > 0"));
        }
        if let Some(k) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::domain(format!("non-finite sample at flat index {k}")));
        }
        let shots = data.len() / samples_per_shot;
        if let Some(flags) = &emission_flags {
            if flags.len() != shots {
                return Err(Error::domain(format!(
                    "{} emission flags for {shots} shots",
                    flags.len()
                )));
            }
        }
        Ok(TraceSet {
            data,
            samples_per_shot,
            dt,
            start_time,
            emission_flags,
            config,
        })
    }

    pub fn shots(&self) -> usize {
        self.data.len() / self.samples_per_shot
    }

    pub fn samples_per_shot(&self) -> usize {
        self.samples_per_shot
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn duration(&self) -> f64 {
        self.samples_per_shot as f64 * self.dt
    }

    pub fn emission_flags(&self) -> Option<&[bool]> {
        self.emission_flags.as_deref()
    }

    pub fn config(&self) -> Option<&SimConfig> {
        self.config.as_ref()
    }

    /// All samples, shot-major.
    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn trace(&self, shot: usize) -> TraceView<'_> {
        let l = self.samples_per_shot;
        TraceView {
            samples: &self.data[shot * l..(shot + 1) * l],
            start_time: self.start_time,
            dt: self.dt,
        }
    }

    pub fn traces(&self) -> impl ExactSizeIterator<Item = TraceView<'_>> + '_ {
        self.data.chunks_exact(self.samples_per_shot).map(|samples| TraceView {
            samples,
            start_time: self.start_time,
            dt: self.dt,
        })
    }
}

/// Per-config quantities shared by every shot.
struct ShotKernel<'a> {
    config: &'a SimConfig,
    /// Signed coherent amplitude `A0 sin(theta(t)) envelope(t)`.
    amplitude: Vec<f64>,
    leakage: Vec<Complex64>,
    onset: usize,
    walk_std: Vec<f64>,
    noise_std: f64,
    base_phase: f64,
}

impl<'a> ShotKernel<'a> {
    fn new(config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        let pulse = config.effective_pulse()?;
        let len = config.record_length;
        let (t_on, t_end) = (config.pulse_start(), config.pulse_end());
        let t1 = config.decoherence.t1;

        let mut amplitude = vec![0.0; len];
        let mut leakage = vec![Complex64::new(0.0, 0.0); len];
        for k in 0..len {
            let t = config.sample_time(k);
            if t < t_on {
                continue;
            }
            let theta = partial_pulse_area(&pulse, t - t_on, DEFAULT_AREA_STEP);
            let decay = wavepacket_envelope((t - t_end).max(0.0), t1);
            amplitude[k] = config.signal_amplitude * theta.sin() * decay;
            if t <= t_end && config.crosstalk != 0.0 {
                let drive = pulse.amplitude * pulse.shape(t - t_on);
                leakage[k] = Complex64::from_polar(config.crosstalk * drive, pulse.phase);
            }
        }

        let onset = (0..len)
            .find(|&k| config.sample_time(k) >= t_on)
            .unwrap_or(len);
        let rate = 2.0 / config.decoherence.t_phi;
        let walk_std = (0..len)
            .map(|k| {
                if k < onset {
                    0.0
                } else {
                    let prev = if k == onset { t_on } else { config.sample_time(k - 1) };
                    (rate * (config.sample_time(k) - prev)).sqrt()
                }
            })
            .collect();

        Ok(ShotKernel {
            config,
            amplitude,
            leakage,
            onset,
            walk_std,
            noise_std: (config.noise_sigma / 2.0).sqrt(),
            base_phase: pulse.phase - FRAC_PI_2,
        })
    }

    /// Writes shot `index` into `out` and returns its emission flag.
    fn shot(&self, index: u64, out: &mut [Complex32], path: &mut [f64]) -> bool {
        let cfg = self.config;
        let seed = cfg.seed;
        let p = cfg.emission_probability;
        let emitted = p > 0.0 && substream(seed, index, Channel::Emission).random::<f64>() < p;

        let mut signal: Vec<Complex64> = self.leakage.clone();

        if emitted && cfg.signal_amplitude != 0.0 {
            path.fill(0.0);
            if cfg.phase_noise.is_active() {
                let mut rng = substream(seed, index, Channel::CorrelatedPhase);
                phase_noise::fill_phase_path(&cfg.phase_noise, cfg.sample_period, path, &mut rng);
                let reference = path.get(self.onset).copied().unwrap_or(0.0);
                path.iter_mut().for_each(|x| *x -= reference);
            }
            if cfg.decoherence.t_phi.is_finite() {
                let mut rng = substream(seed, index, Channel::Dephasing);
                let mut walk = 0.0;
                for (x, std) in path.iter_mut().zip(&self.walk_std).skip(self.onset) {
                    walk += std * rng.sample::<f64, _>(StandardNormal);
                    *x += walk;
                }
            }
            let t_on = cfg.pulse_start();
            for k in self.onset..signal.len() {
                let drift = cfg.phase_drift_rate * (cfg.sample_time(k) - t_on);
                signal[k] += Complex64::from_polar(self.amplitude[k], self.base_phase + path[k] + drift);
            }
        }

        if self.noise_std > 0.0 {
            let mut rng = substream(seed, index, Channel::AdditiveNoise);
            for s in signal.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *s += Complex64::new(re, im) * self.noise_std;
            }
        }
        for (slot, s) in out.iter_mut().zip(&signal) {
            *slot = Complex32::new(s.re as f32, s.im as f32);
        }
        emitted
    }
}

/// Generates shot `shot_index` of the ensemble described by `config`.
///
/// The result depends only on `(config, shot_index)`.
pub fn simulate_shot(config: &SimConfig, shot_index: u64) -> Result<Shot> {
    let kernel = ShotKernel::new(config)?;
    let mut samples = vec![Complex32::new(0.0, 0.0); config.record_length];
    let mut path = vec![0.0; config.record_length];
    let emitted = kernel.shot(shot_index, &mut samples, &mut path);
    Ok(Shot {
        trace: Trace {
            samples,
            start_time: 0.0,
            dt: config.sample_period,
        },
        emitted,
    })
}

/// Generates all `config.shots` records on `workers` threads (0 = all cores).
///
/// The output is bit-identical for any worker count.
pub fn simulate_ensemble(config: &SimConfig, workers: usize) -> Result<TraceSet> {
    let kernel = ShotKernel::new(config)?;
    let bytes = config
        .ensemble_bytes()
        .filter(|&b| b <= MAX_ENSEMBLE_BYTES)
        .ok_or_else(|| {
            Error::Resource(format!(
                "{} shots x {} samples exceeds the {} byte ensemble limit",
                config.shots, config.record_length, MAX_ENSEMBLE_BYTES
            ))
        })?;
    let len = config.record_length;
    let mut data = Vec::new();
    data.try_reserve_exact(bytes as usize / std::mem::size_of::<Complex32>())
        .map_err(|e| Error::Resource(format!("cannot allocate {bytes} bytes: {e}")))?;
    data.resize(config.shots * len, Complex32::new(0.0, 0.0));
    let mut flags = vec![false; config.shots];

    let run = |data: &mut [Complex32], flags: &mut [bool]| {
        data.par_chunks_mut(len)
            .zip(flags.par_iter_mut())
            .enumerate()
            .for_each_init(
                || vec![0.0; len],
                |path, (i, (out, flag))| {
                    *flag = kernel.shot(i as u64, out, path);
                },
            );
    };
    if workers == 0 {
        run(&mut data, &mut flags);
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Resource(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| run(&mut data, &mut flags));
    }

    TraceSet::from_parts(
        data,
        len,
        config.sample_period,
        0.0,
        Some(flags),
        Some(config.clone()),
    )
}
