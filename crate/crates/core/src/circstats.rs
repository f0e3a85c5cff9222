//! Windowed integration of records and circular statistics of the resulting phases.

use std::f64::consts::TAU;
use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shot_sim::{TraceSet, TraceView};

/// Default histogram bin width, `0.01 pi`.
pub const DEFAULT_BIN_WIDTH: f64 = 0.01 * std::f64::consts::PI;

/// Slack when comparing sample times against window edges, in units of `dt`.
const EDGE_SLACK: f64 = 1e-9;

/// Integration window `[t_start, t_start + length)` in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t_start: f64,
    pub length: f64,
}

impl WindowSpec {
    pub fn new(t_start: f64, length: f64) -> Result<Self> {
        if !t_start.is_finite() || !(length > 0.0 && length.is_finite()) {
            return Err(Error::domain(format!(
                "window needs finite start and positive length, got [{t_start}, +{length})"
            )));
        }
        Ok(WindowSpec { t_start, length })
    }

    /// Indices `k` with `t_start <= start + k dt < t_start + length`.
    pub fn sample_range(&self, start_time: f64, dt: f64, samples: usize) -> Result<Range<usize>> {
        if self.length < dt * (1.0 - EDGE_SLACK) {
            return Err(Error::domain(format!(
                "window length {} ns is shorter than one {dt} ns sample",
                self.length
            )));
        }
        let lo = ((self.t_start - start_time) / dt - EDGE_SLACK).ceil();
        let hi = ((self.t_start + self.length - start_time) / dt - EDGE_SLACK).ceil();
        let end = start_time + samples as f64 * dt;
        if lo < 0.0 || hi > samples as f64 {
            return Err(Error::domain(format!(
                "window [{}, {}) ns leaves the record [{start_time}, {end}) ns",
                self.t_start,
                self.t_start + self.length
            )));
        }
        Ok(lo as usize..hi as usize)
    }
}

/// Left-Riemann sum `sum s(t_k) dt` over the samples inside `window`.
pub fn integrate_window(trace: &TraceView<'_>, window: &WindowSpec) -> Result<Complex64> {
    let range = window.sample_range(trace.start_time, trace.dt, trace.samples.len())?;
    Ok(sum_range(trace.samples, range) * trace.dt)
}

fn sum_range(samples: &[num_complex::Complex32], range: Range<usize>) -> Complex64 {
    samples[range]
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, z| acc + Complex64::new(z.re as f64, z.im as f64))
}

/// [`integrate_window`] applied to every shot, in acquisition order.
pub fn integrate_all(set: &TraceSet, window: &WindowSpec) -> Result<Vec<Complex64>> {
    let range = window.sample_range(set.start_time(), set.dt(), set.samples_per_shot())?;
    let dt = set.dt();
    let l = set.samples_per_shot();
    Ok(set
        .data()
        .par_chunks_exact(l)
        .map(|shot| sum_range(shot, range.clone()) * dt)
        .collect())
}

/// Means of consecutive groups of `m` values; a trailing partial group is dropped.
pub fn batch_average(values: &[Complex64], m: usize) -> Result<Vec<Complex64>> {
    if m == 0 {
        return Err(Error::domain("batch size must be at least 1"));
    }
    if m > values.len() {
        return Err(Error::EmptyResult(format!(
            "batch size {m} exceeds the {} available values",
            values.len()
        )));
    }
    Ok(values
        .chunks_exact(m)
        .map(|g| g.iter().sum::<Complex64>() / m as f64)
        .collect())
}

/// Argument of `z` in `(0, 2 pi]`; an exact zero has no phase.
pub fn phase(z: Complex64) -> Result<f64> {
    if z.re == 0.0 && z.im == 0.0 {
        return Err(Error::domain("phase of an exactly zero value is undefined"));
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::domain(format!("phase of non-finite value {z}")));
    }
    let a = z.im.atan2(z.re);
    Ok(if a <= 0.0 { a + TAU } else { a })
}

fn wrap_phase(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w == 0.0 {
        TAU
    } else {
        w
    }
}

/// Phase samples in `(0, 2 pi]` with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEnsemble {
    phases: Vec<f64>,
    pub window: Option<WindowSpec>,
    pub batch_size: usize,
}

impl PhaseEnsemble {
    /// Wraps arbitrary angles into `(0, 2 pi]`.
    pub fn from_angles(angles: impl IntoIterator<Item = f64>) -> Result<Self> {
        let phases = angles
            .into_iter()
            .map(|a| {
                if a.is_finite() {
                    Ok(wrap_phase(a))
                } else {
                    Err(Error::domain(format!("non-finite phase {a}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PhaseEnsemble {
            phases,
            window: None,
            batch_size: 1,
        })
    }

    pub fn with_source(mut self, window: WindowSpec, batch_size: usize) -> Self {
        self.window = Some(window);
        self.batch_size = batch_size;
        self
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    fn resultant(&self) -> Result<Complex64> {
        if self.phases.is_empty() {
            return Err(Error::domain("empty phase ensemble"));
        }
        let sum: Complex64 = self.phases.iter().map(|&p| Complex64::from_polar(1.0, p)).sum();
        Ok(sum / self.phases.len() as f64)
    }

    /// Circular mean direction in `(0, 2 pi]`, or `None` when the resultant vanishes.
    pub fn mean_direction(&self) -> Result<Option<f64>> {
        let z = self.resultant()?;
        Ok(phase(z).ok().filter(|_| z.norm() > f64::EPSILON))
    }
}

/// Phases of `values`, one per entry.
pub fn phase_of(values: &[Complex64]) -> Result<PhaseEnsemble> {
    let phases = values.iter().map(|&z| phase(z)).collect::<Result<Vec<_>>>()?;
    Ok(PhaseEnsemble {
        phases,
        window: None,
        batch_size: 1,
    })
}

/// `|mean exp(i phi)|`.
pub fn mean_resultant_length(ensemble: &PhaseEnsemble) -> Result<f64> {
    Ok(ensemble.resultant()?.norm().min(1.0))
}

/// Holevo phase variance `R^-2 - 1`, or the reason it cannot be trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HolevoVariance {
    Resolved { value: f64 },
    /// `R` is at or below the noise floor `3/sqrt(N)`, or zero.
    Unresolved {
        r: f64,
        #[serde(with = "crate::serde_ext")]
        nominal: f64,
    },
}

impl HolevoVariance {
    pub fn value(&self) -> Option<f64> {
        match *self {
            HolevoVariance::Resolved { value } => Some(value),
            HolevoVariance::Unresolved { .. } => None,
        }
    }

    /// `R^-2 - 1` regardless of resolution; infinite for `R = 0`.
    pub fn nominal(&self) -> f64 {
        match *self {
            HolevoVariance::Resolved { value } => value,
            HolevoVariance::Unresolved { nominal, .. } => nominal,
        }
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self, HolevoVariance::Resolved { .. })
    }
}

/// Holevo variance of an ensemble of `n` phases with mean resultant length `r`.
pub fn holevo_from_r(r: f64, n: usize) -> HolevoVariance {
    let nominal = if r > f64::EPSILON { r.powi(-2) - 1.0 } else { f64::INFINITY };
    let floor = 3.0 / (n as f64).sqrt();
    if r <= f64::EPSILON || r < floor {
        HolevoVariance::Unresolved { r, nominal }
    } else {
        HolevoVariance::Resolved { value: nominal.max(0.0) }
    }
}

pub fn holevo_variance(ensemble: &PhaseEnsemble) -> Result<HolevoVariance> {
    Ok(holevo_from_r(mean_resultant_length(ensemble)?, ensemble.len()))
}

/// Normalised phase histogram over bins `(k d, (k+1) d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePdf {
    pub bin_edges: Vec<f64>,
    pub bin_masses: Vec<f64>,
}

impl PhasePdf {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index of the heaviest bin; the first one wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.bin_masses.iter().enumerate() {
            if m > self.bin_masses[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_mass(&self) -> f64 {
        self.bin_masses.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min_mass(&self) -> f64 {
        self.bin_masses.iter().cloned().fold(f64::MAX, f64::min)
    }
}

/// Number of bins for `bin_width`, which is rounded to the nearest divisor of 2 pi.
pub fn bin_count(bin_width: f64) -> Result<usize> {
    if !(bin_width > 0.0 && bin_width <= TAU) {
        return Err(Error::domain(format!("bin width must lie in (0, 2 pi], got {bin_width}")));
    }
    Ok(((TAU / bin_width).round() as usize).max(1))
}

pub fn phase_pdf(ensemble: &PhaseEnsemble, bin_width: f64) -> Result<PhasePdf> {
    if ensemble.is_empty() {
        return Err(Error::domain("empty phase ensemble"));
    }
    let bins = bin_count(bin_width)?;
    let width = TAU / bins as f64;
    let mut counts = vec![0u64; bins];
    for &p in ensemble.phases() {
        let k = ((p / width).ceil() as usize).clamp(1, bins) - 1;
        counts[k] += 1;
    }
    let n = ensemble.len() as f64;
    Ok(PhasePdf {
        bin_edges: (0..=bins).map(|k| k as f64 * width).collect(),
        bin_masses: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// `R` at window `window` after averaging groups of `m` shots.
pub fn windowed_r(set: &TraceSet, window: &WindowSpec, m: usize) -> Result<f64> {
    let values = integrate_all(set, window)?;
    r_of_batches(&values, m)
}

fn r_of_batches(values: &[Complex64], m: usize) -> Result<f64> {
    mean_resultant_length(&phase_of(&batch_average(values, m)?)?)
}

/// `R` on a rectangular grid; `values[i][j]` belongs to `(t_starts[i], lengths[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub t_starts: Vec<f64>,
    pub lengths: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    pub fn new(t_starts: Vec<f64>, lengths: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != t_starts.len() || values.iter().any(|row| row.len() != lengths.len()) {
            return Err(Error::domain(format!(
                "surface values do not form a {} x {} grid",
                t_starts.len(),
                lengths.len()
            )));
        }
        Ok(SurfaceGrid { t_starts, lengths, values })
    }

    pub fn rows(&self) -> usize {
        self.t_starts.len()
    }

    pub fn cols(&self) -> usize {
        self.lengths.len()
    }

    /// Evaluates `f(t_start, length)` on the grid.
    pub fn from_fn(t_starts: &[f64], lengths: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        let values = t_starts
            .iter()
            .map(|&t| lengths.iter().map(|&l| f(t, l)).collect())
            .collect();
        SurfaceGrid {
            t_starts: t_starts.to_vec(),
            lengths: lengths.to_vec(),
            values,
        }
    }
}

/// Mean resultant length over every `(t_start, length)` pair, after averaging
/// groups of `m` shots. Grid points are evaluated in parallel.
pub fn r_surface(set: &TraceSet, t_starts: &[f64], lengths: &[f64], m: usize) -> Result<SurfaceGrid> {
    if t_starts.is_empty() || lengths.is_empty() {
        return Err(Error::domain("surface grid needs at least one start and one length"));
    }
    let windows = t_starts
        .iter()
        .flat_map(|&t| lengths.iter().map(move |&l| WindowSpec::new(t, l)))
        .collect::<Result<Vec<_>>>()?;
    for w in &windows {
        w.sample_range(set.start_time(), set.dt(), set.samples_per_shot())?;
    }
    let flat = windows
        .par_iter()
        .map(|w| {
            let values = set
                .traces()
                .map(|t| integrate_window(&t, w))
                .collect::<Result<Vec<_>>>()?;
            r_of_batches(&values, m)
        })
        .collect::<Result<Vec<f64>>>()?;
    let values = flat.chunks(lengths.len()).map(<[f64]>::to_vec).collect();
    SurfaceGrid::new(t_starts.to_vec(), lengths.to_vec(), values)
}

/// One point of an `R(M)` curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RPoint {
    pub m: usize,
    pub r: f64,
    /// Number of `M`-shot groups that entered `r`.
    pub groups: usize,
}

pub fn r_vs_m(set: &TraceSet, window: &WindowSpec, m_list: &[usize]) -> Result<Vec<RPoint>> {
    if m_list.is_empty() {
        return Err(Error::domain("empty M list"));
    }
    let values = integrate_all(set, window)?;
    m_list
        .iter()
        .map(|&m| {
            let batches = batch_average(&values, m)?;
            let r = mean_resultant_length(&phase_of(&batches)?)?;
            Ok(RPoint { m, r, groups: batches.len() })
        })
        .collect()
}

/// Ensemble statistics of the raw samples at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t: f64,
    pub mean_i: f64,
    pub mean_q: f64,
    /// `|<I + iQ>|`.
    pub mean_amplitude: f64,
    /// Direction of `<exp(i arg s)>`, NaN when undefined.
    pub circular_mean_phase: f64,
    /// Plain average of `arg s` in `(0, 2 pi]`, NaN when undefined.
    pub arithmetic_mean_phase: f64,
    pub r: f64,
}

/// Per-sample ensemble averages. Exactly zero samples are left out of the phase columns.
pub fn time_series(set: &TraceSet) -> Vec<TimePoint> {
    let n = set.shots() as f64;
    (0..set.samples_per_shot())
        .into_par_iter()
        .map(|k| {
            let mut mean = Complex64::new(0.0, 0.0);
            let mut unit = Complex64::new(0.0, 0.0);
            let mut phase_sum = 0.0;
            let mut nonzero = 0usize;
            for tr in set.traces() {
                let z = Complex64::new(tr.samples[k].re as f64, tr.samples[k].im as f64);
                mean += z;
                if let Ok(p) = phase(z) {
                    unit += Complex64::from_polar(1.0, p);
                    phase_sum += p;
                    nonzero += 1;
                }
            }
            mean /= n;
            let (circ, arith, r) = if nonzero == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let u = unit / nonzero as f64;
                (phase(u).unwrap_or(f64::NAN), phase_sum / nonzero as f64, u.norm())
            };
            TimePoint {
                t: set.start_time() + k as f64 * set.dt(),
                mean_i: mean.re,
                mean_q: mean.im,
                mean_amplitude: mean.norm(),
                circular_mean_phase: circ,
                arithmetic_mean_phase: arith,
                r,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex32;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn set_from(rows: &[Vec<Complex32>], dt: f64) -> TraceSet {
        let l = rows[0].len();
        TraceSet::from_parts(rows.concat(), l, dt, 0.0, None, None).unwrap()
    }

    #[test]
    fn integrate_window_examples() {
        let samples = vec![Complex32::new(2.0, -1.0); 50];
        let tr = TraceView { samples: &samples, start_time: 0.0, dt: 0.5 };
        let z = integrate_window(&tr, &WindowSpec::new(3.0, 10.0).unwrap()).unwrap();
        assert!((z - c(20.0, -10.0)).norm() < 1e-12);
        let zero = vec![Complex32::new(0.0, 0.0); 50];
        let tr0 = TraceView { samples: &zero, ..tr };
        assert_eq!(integrate_window(&tr0, &WindowSpec::new(0.0, 25.0).unwrap()).unwrap(), c(0.0, 0.0));
        let ramp: Vec<_> = (0..50).map(|k| Complex32::new(k as f32, 0.0)).collect();
        let tr = TraceView { samples: &ramp, ..tr };
        let single = integrate_window(&tr, &WindowSpec::new(7.0, 0.5).unwrap()).unwrap();
        assert_eq!(single, c(14.0 * 0.5, 0.0));
        // left Riemann: [1, 2) with dt 0.5 covers samples 2 and 3
        let two = integrate_window(&tr, &WindowSpec::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(two, c(2.5, 0.0));
    }

    #[test]
    fn window_bounds_are_checked() {
        let samples = vec![Complex32::new(1.0, 0.0); 10];
        let tr = TraceView { samples: &samples, start_time: 0.0, dt: 1.0 };
        assert!(integrate_window(&tr, &WindowSpec::new(0.0, 10.0).unwrap()).is_ok());
        assert!(matches!(integrate_window(&tr, &WindowSpec::new(0.0, 10.5).unwrap()), Err(Error::Domain(_))));
        assert!(integrate_window(&tr, &WindowSpec::new(-1.0, 2.0).unwrap()).is_err());
        assert!(integrate_window(&tr, &WindowSpec::new(2.0, 0.5).unwrap()).is_err());
        assert!(WindowSpec::new(0.0, 0.0).is_err());
    }

    #[test]
    fn batch_average_examples() {
        let v = [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(7.0, 0.0)];
        assert_eq!(batch_average(&v, 1).unwrap(), v.to_vec());
        assert_eq!(batch_average(&v, 2).unwrap(), vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let all = batch_average(&v, 5).unwrap();
        assert_eq!(all.len(), 1);
        assert!((all[0] - c(1.8, 0.4)).norm() < 1e-15);
        assert!(matches!(batch_average(&v, 6), Err(Error::EmptyResult(_))));
        assert!(matches!(batch_average(&v, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn phase_convention() {
        assert!((phase(c(0.0, 1.0)).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(phase(c(-1.0, 0.0)).unwrap(), PI);
        assert_eq!(phase(c(-1.0, -0.0)).unwrap(), PI);
        assert_eq!(phase(c(1.0, 0.0)).unwrap(), TAU);
        assert!((phase(c(0.0, -1.0)).unwrap() - 1.5 * PI).abs() < 1e-15);
        assert!(matches!(phase(c(0.0, 0.0)), Err(Error::Domain(_))));
        assert!(phase_of(&[c(1.0, 1.0), c(0.0, 0.0)]).is_err());
    }

    #[test]
    fn mean_resultant_length_examples() {
        let same = PhaseEnsemble::from_angles([1.0; 5]).unwrap();
        assert!((mean_resultant_length(&same).unwrap() - 1.0).abs() < 1e-15);
        let four = PhaseEnsemble::from_angles([0.0, FRAC_PI_2, PI, 1.5 * PI]).unwrap();
        assert!(mean_resultant_length(&four).unwrap() < 1e-15);
        let two = PhaseEnsemble::from_angles([0.0, FRAC_PI_2]).unwrap();
        assert!((mean_resultant_length(&two).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let empty = PhaseEnsemble::from_angles([]).unwrap();
        assert!(matches!(mean_resultant_length(&empty), Err(Error::Domain(_))));
    }

    #[test]
    fn holevo_examples() {
        assert_eq!(holevo_from_r(1.0, 1000), HolevoVariance::Resolved { value: 0.0 });
        assert_eq!(holevo_from_r(0.5, 1000).value(), Some(3.0));
        let zero = holevo_from_r(0.0, 1000);
        assert!(!zero.is_resolved() && zero.nominal().is_infinite());
        // below 3/sqrt(N)
        let low = holevo_from_r(0.05, 1000);
        assert!(!low.is_resolved());
        assert!((low.nominal() - 399.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_phases_are_unresolved() {
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = PhaseEnsemble::from_angles((0..n).map(|_| rng.random::<f64>() * TAU)).unwrap();
        let r = mean_resultant_length(&e).unwrap();
        let expected = (PI / (4.0 * n as f64)).sqrt();
        // R of uniform phases is Rayleigh distributed with mean sqrt(pi/4N)
        assert!(r < 5.0 * expected, "{r}");
        let vh = holevo_variance(&e).unwrap();
        assert!(!vh.is_resolved());
        assert!(vh.nominal() > 1e4);
    }

    #[test]
    fn phase_pdf_examples() {
        let one = PhaseEnsemble::from_angles([0.305, 0.306, 0.307]).unwrap();
        let pdf = phase_pdf(&one, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(pdf.bin_masses.len(), 200);
        assert_eq!(pdf.max_mass(), 1.0);
        assert_eq!(pdf.bin_masses.iter().filter(|&&m| m > 0.0).count(), 1);
        let two = PhaseEnsemble::from_angles([1.0, 1.0, 4.0, 4.0]).unwrap();
        let pdf = phase_pdf(&two, DEFAULT_BIN_WIDTH).unwrap();
        let heavy: Vec<_> = pdf.bin_masses.iter().filter(|&&m| m > 0.0).collect();
        assert_eq!(heavy, vec![&0.5, &0.5]);
        // phase 2 pi lands in the last bin, a phase just above 0 in the first
        let edges = PhaseEnsemble::from_angles([TAU, 1e-9]).unwrap();
        let pdf = phase_pdf(&edges, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(pdf.bin_masses[199], 0.5);
        assert_eq!(pdf.bin_masses[0], 0.5);
    }

    #[test]
    fn bin_width_is_snapped_to_divisor() {
        assert_eq!(bin_count(DEFAULT_BIN_WIDTH).unwrap(), 200);
        assert_eq!(bin_count(0.1).unwrap(), 63);
        let e = PhaseEnsemble::from_angles([1.0]).unwrap();
        let pdf = phase_pdf(&e, 0.1).unwrap();
        assert!((pdf.bin_width() - TAU / 63.0).abs() < 1e-15);
        assert!((pdf.bin_edges[63] - TAU).abs() < 1e-12);
        assert!(bin_count(0.0).is_err());
        assert!(bin_count(7.0).is_err());
    }

    #[test]
    fn noiseless_surface_is_all_ones() {
        let rows: Vec<Vec<Complex32>> = (0..20)
            .map(|_| vec![Complex32::new(0.3, -0.4); 40])
            .collect();
        let set = set_from(&rows, 1.0);
        let s = r_surface(&set, &[0.0, 5.0, 10.0], &[2.0, 10.0, 30.0], 2).unwrap();
        for row in &s.values {
            for &r in row {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
        assert!(r_surface(&set, &[20.0], &[30.0], 1).is_err());
    }

    #[test]
    fn pure_noise_surface_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<Complex32>> = (0..20_000)
            .map(|_| {
                (0..20)
                    .map(|_| Complex32::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                    .collect()
            })
            .collect();
        let set = set_from(&rows, 1.0);
        let s = r_surface(&set, &[0.0, 4.0], &[4.0, 16.0], 1).unwrap();
        for &r in s.values.iter().flatten() {
            assert!(r < 0.03, "{r}");
        }
    }

    #[test]
    fn r_vs_m_reports_group_counts() {
        let rows: Vec<Vec<Complex32>> = (0..10).map(|_| vec![Complex32::new(1.0, 0.0); 4]).collect();
        let set = set_from(&rows, 1.0);
        let w = WindowSpec::new(0.0, 4.0).unwrap();
        let pts = r_vs_m(&set, &w, &[1, 3, 10]).unwrap();
        assert_eq!(pts.iter().map(|p| p.groups).collect::<Vec<_>>(), vec![10, 3, 1]);
        assert!(r_vs_m(&set, &w, &[]).is_err());
        assert!(matches!(r_vs_m(&set, &w, &[11]), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn time_series_labels_both_phase_means() {
        // phases just either side of the 0 / 2 pi seam
        let rows = vec![
            vec![Complex32::new(1.0, 0.1), Complex32::new(0.0, 0.0)],
            vec![Complex32::new(1.0, -0.1), Complex32::new(0.0, 0.0)],
        ];
        let ts = time_series(&set_from(&rows, 1.0));
        assert!((ts[0].circular_mean_phase - TAU).abs() < 1e-6);
        assert!((ts[0].arithmetic_mean_phase - PI).abs() < 1e-6);
        assert!((ts[0].mean_amplitude - 1.0).abs() < 1e-6);
        assert!(ts[1].circular_mean_phase.is_nan());
        assert_eq!(ts[1].t, 1.0);
    }

    fn coherent_values(rng: &mut ChaCha8Rng, n: usize, amp: f64, sigma: f64) -> Vec<Complex64> {
        (0..n)
            .map(|_| {
                c(
                    amp + sigma * rng.sample::<f64, _>(StandardNormal),
                    sigma * rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect()
    }

    #[test]
    fn averaging_sharpens_on_average() {
        let ms = [1, 2, 4, 8, 16];
        let mut mean_r = [0.0; 5];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = coherent_values(&mut rng, 16_000, 0.1, 1.0);
            for (i, &m) in ms.iter().enumerate() {
                mean_r[i] += r_of_batches(&v, m).unwrap() / 20.0;
            }
        }
        for w in mean_r.windows(2) {
            assert!(w[1] > w[0], "{mean_r:?}");
        }
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn grouped_shots_match_independent_averages() {
        let (m, groups, amp, sigma) = (8, 20_000, 0.2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shots = coherent_values(&mut rng, m * groups, amp, sigma);
        let grouped = phase_of(&batch_average(&shots, m).unwrap()).unwrap();
        let direct = coherent_values(&mut rng, groups, amp, sigma / (m as f64).sqrt());
        let direct = phase_of(&direct).unwrap();
        let d = ks_statistic(grouped.phases().to_vec(), direct.phases().to_vec());
        // two-sample critical value at alpha = 0.001
        let crit = 1.95 * (2.0 / groups as f64).sqrt();
        assert!(d < crit, "KS {d} vs {crit}");
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn r_in_unit_interval_and_rotation_invariant(
                phases in vec(-10.0f64..10.0, 1..200),
                shift in -7.0f64..7.0,
            ) {
                let e = PhaseEnsemble::from_angles(phases.clone()).unwrap();
                let r = mean_resultant_length(&e).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
                let rotated = PhaseEnsemble::from_angles(phases.iter().map(|p| p + shift)).unwrap();
                prop_assert!((mean_resultant_length(&rotated).unwrap() - r).abs() < 1e-12);
                if let Some(v) = holevo_variance(&e).unwrap().value() {
                    prop_assert!(v >= 0.0);
                }
            }

            #[test]
            fn phases_stay_in_half_open_circle(re in -1e3f64..1e3, im in -1e3f64..1e3) {
                prop_assume!(re != 0.0 || im != 0.0);
                let p = phase(c(re, im)).unwrap();
                prop_assert!(p > 0.0 && p <= TAU);
            }

            #[test]
            fn pdf_normalised_and_shift_covariant(
                phases in vec(0.001f64..std::f64::consts::TAU, 1..300),
                k in 0usize..200,
            ) {
                let e = PhaseEnsemble::from_angles(phases.clone()).unwrap();
                let pdf = phase_pdf(&e, DEFAULT_BIN_WIDTH).unwrap();
                prop_assert!((pdf.bin_masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let width = pdf.bin_width();
                // keep samples away from bin edges so rounding cannot move them
                let snapped: Vec<f64> = phases
                    .iter()
                    .map(|p| ((p / width).floor() + 0.5) * width)
                    .collect();
                let base = phase_pdf(&PhaseEnsemble::from_angles(snapped.clone()).unwrap(), DEFAULT_BIN_WIDTH).unwrap();
                let moved = PhaseEnsemble::from_angles(snapped.iter().map(|p| p + k as f64 * width)).unwrap();
                let moved = phase_pdf(&moved, DEFAULT_BIN_WIDTH).unwrap();
                for i in 0..200 {
                    prop_assert_eq!(moved.bin_masses[(i + k) % 200], base.bin_masses[i]);
                }
            }
        }
    }
}
