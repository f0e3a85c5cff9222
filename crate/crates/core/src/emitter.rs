//! Closed-form physics of the driven two-level emitter.
//!
//! Everything here is evaluated in the rotating frame at baseband: the qubit
//! transition frequency carried by [`DrivePulse`] is metadata only.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default step for the pulse-area quadrature, in ns.
pub const DEFAULT_AREA_STEP: f64 = 0.01;

/// Relative change allowed between the area at `h` and at `h/2`.
const AREA_CONVERGENCE: f64 = 1e-6;

/// Minimum number of trapezoid intervals across the pulse.
const MIN_AREA_INTERVALS: usize = 16;

/// Super-Gaussian drive pulse `D exp(((2t - tau)/tau)^(2n) ln alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivePulse {
    /// Peak amplitude `D` in rad/ns, so that the envelope integral is a rotation angle.
    pub amplitude: f64,
    /// Pulse duration `tau` in ns.
    pub duration: f64,
    /// Super-Gaussian order `n`.
    pub order: u32,
    /// Envelope value at the edges relative to the peak, `0 < alpha < 1`.
    pub edge_fraction: f64,
    /// Drive phase in radians.
    #[serde(default)]
    pub phase: f64,
    /// Qubit transition frequency in GHz. Never used in computation.
    #[serde(default = "default_carrier")]
    pub carrier_ghz: f64,
}

fn default_carrier() -> f64 {
    6.2503
}

impl DrivePulse {
    pub fn new(amplitude: f64, duration: f64, order: u32, edge_fraction: f64) -> Result<Self> {
        let pulse = DrivePulse {
            amplitude,
            duration,
            order,
            edge_fraction,
            phase: 0.0,
            carrier_ghz: default_carrier(),
        };
        pulse.validate()?;
        Ok(pulse)
    }

    /// The 16 ns fifth-order pulse with 1% edges used throughout the experiment,
    /// scaled to produce the rotation `theta`.
    pub fn standard(theta: f64) -> Result<Self> {
        DrivePulse::new(1.0, 16.0, 5, 0.01)?.with_area(theta, DEFAULT_AREA_STEP)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config(format!(
                "pulse duration must be positive, got {}",
                self.duration
            )));
        }
        if self.order < 1 {
            return Err(Error::config("super-Gaussian order must be at least 1"));
        }
        if !(self.edge_fraction > 0.0 && self.edge_fraction < 1.0) {
            return Err(Error::config(format!(
                "edge fraction must lie in (0, 1), got {}",
                self.edge_fraction
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config(format!(
                "pulse amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if !self.phase.is_finite() {
            return Err(Error::config("drive phase must be finite"));
        }
        Ok(())
    }

    /// Returns a copy whose amplitude is rescaled so the effective area equals `theta`.
    pub fn with_area(mut self, theta: f64, quadrature_step: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::domain(format!("target area must be non-negative, got {theta}")));
        }
        let unit = DrivePulse {
            amplitude: 1.0,
            ..self
        };
        let unit_area = effective_pulse_area(&unit, quadrature_step)?;
        self.amplitude = theta / unit_area;
        Ok(self)
    }

    /// Envelope without the amplitude factor and without a range check.
    pub(crate) fn shape(&self, t: f64) -> f64 {
        let x = (2.0 * t - self.duration) / self.duration;
        (x.powi(2 * self.order as i32) * self.edge_fraction.ln()).exp()
    }
}

/// Bloch angles of the emitter after the drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparationState {
    /// Polar angle, kept unwrapped so multi-rotation drives stay distinguishable.
    pub theta: f64,
    /// Azimuth in (-pi, pi].
    pub phi: f64,
}

impl PreparationState {
    pub fn new(theta: f64, phi: f64) -> Self {
        PreparationState {
            theta,
            phi: wrap_pi(phi),
        }
    }

    /// State left behind by `pulse`; the azimuth follows the drive phase.
    pub fn from_pulse(pulse: &DrivePulse, quadrature_step: f64) -> Result<Self> {
        let theta = effective_pulse_area(pulse, quadrature_step)?;
        Ok(PreparationState::new(theta, pulse.phase))
    }
}

fn wrap_pi(phi: f64) -> f64 {
    let mut w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; the interval is (-pi, pi]
    w
}

/// Energy relaxation, pure dephasing and coupling of the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceParams {
    /// Energy relaxation time `T1` in ns.
    pub t1: f64,
    /// Pure dephasing time in ns; `f64::INFINITY` disables dephasing.
    #[serde(with = "crate::serde_ext")]
    pub t_phi: f64,
    /// Coupling `lambda` in rad/ns, used only by [`emission_expectation`].
    #[serde(default)]
    pub coupling: f64,
}

impl DecoherenceParams {
    pub fn new(t1: f64, t_phi: f64, coupling: f64) -> Result<Self> {
        let params = DecoherenceParams { t1, t_phi, coupling };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1.is_nan() || self.t1 <= 0.0 {
            return Err(Error::config(format!("T1 must be positive, got {}", self.t1)));
        }
        if self.t_phi.is_nan() || self.t_phi <= 0.0 {
            return Err(Error::config(format!("T_phi must be positive, got {}", self.t_phi)));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::config(format!(
                "coupling must be non-negative, got {}",
                self.coupling
            )));
        }
        Ok(())
    }
}

/// Drive envelope at time `t` measured from the pulse start.
pub fn super_gaussian_envelope(t: f64, pulse: &DrivePulse) -> Result<f64> {
    if !(0.0..=pulse.duration).contains(&t) {
        return Err(Error::domain(format!(
            "t = {t} ns lies outside the pulse [0, {}]",
            pulse.duration
        )));
    }
    Ok(pulse.amplitude * pulse.shape(t))
}

/// Rotation angle imprinted by the pulse: the integral of its envelope.
///
/// Uses the composite trapezoid rule at `quadrature_step`, which must split the
/// pulse into at least 16 equal intervals. The result is rejected with
/// [`Error::Precision`] when halving the step changes it by more than 1e-6
/// relative.
pub fn effective_pulse_area(pulse: &DrivePulse, quadrature_step: f64) -> Result<f64> {
    pulse.validate()?;
    if !(quadrature_step > 0.0 && quadrature_step.is_finite()) {
        return Err(Error::domain(format!(
            "quadrature step must be positive, got {quadrature_step}"
        )));
    }
    let ratio = pulse.duration / quadrature_step;
    let intervals = ratio.round();
    if (ratio - intervals).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::domain(format!(
            "quadrature step {quadrature_step} ns does not divide the {} ns pulse",
            pulse.duration
        )));
    }
    let intervals = intervals as usize;
    if intervals < MIN_AREA_INTERVALS {
        return Err(Error::Precision(format!(
            "{intervals} quadrature intervals across the pulse, need at least {MIN_AREA_INTERVALS}"
        )));
    }

    let coarse = trapezoid_area(pulse, intervals);
    let fine = trapezoid_area(pulse, 2 * intervals);
    let scale = coarse.abs().max(fine.abs());
    if scale > 0.0 && (coarse - fine).abs() > AREA_CONVERGENCE * scale {
        return Err(Error::Precision(format!(
            "pulse area not converged at step {quadrature_step} ns: {coarse} vs {fine} at half step"
        )));
    }
    Ok(coarse)
}

fn trapezoid_area(pulse: &DrivePulse, intervals: usize) -> f64 {
    let h = pulse.duration / intervals as f64;
    let interior: f64 = (1..intervals).map(|i| pulse.shape(i as f64 * h)).sum();
    let edges = 0.5 * (pulse.shape(0.0) + pulse.shape(pulse.duration));
    pulse.amplitude * h * (edges + interior)
}

/// Area accumulated from the pulse start up to `t` (clamped to the pulse).
pub(crate) fn partial_pulse_area(pulse: &DrivePulse, t: f64, quadrature_step: f64) -> f64 {
    let t = t.clamp(0.0, pulse.duration);
    if t == 0.0 {
        return 0.0;
    }
    let n = (t / quadrature_step).ceil().max(1.0) as usize;
    let h = t / n as f64;
    let interior: f64 = (1..n).map(|i| pulse.shape(i as f64 * h)).sum();
    pulse.amplitude * h * (0.5 * (pulse.shape(0.0) + pulse.shape(t)) + interior)
}

/// Mean emitted field `-(i/2) sin(theta) sin(lambda t) e^(i phi)`.
///
/// The real and imaginary parts are the I and Q quadratures.
pub fn emission_expectation(state: &PreparationState, coupling: f64, t: f64) -> Complex64 {
    let magnitude = 0.5 * state.theta.sin() * (coupling * t).sin();
    Complex64::new(0.0, -magnitude) * Complex64::from_polar(1.0, state.phi)
}

/// Field envelope of the emitted wavepacket, `exp(-t / (2 T1))`.
pub fn wavepacket_envelope(t_since_pulse_end: f64, t1: f64) -> f64 {
    (-t_since_pulse_end / (2.0 * t1)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn pulse(d: f64, alpha: f64) -> DrivePulse {
        DrivePulse::new(d, 16.0, 5, alpha).unwrap()
    }

    // Adaptive Simpson with a tight absolute tolerance; independent of the trapezoid path.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        step(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    #[test]
    fn envelope_values() {
        let p = pulse(1.0, 0.01);
        assert_eq!(super_gaussian_envelope(8.0, &p).unwrap(), 1.0);
        assert!((super_gaussian_envelope(0.0, &p).unwrap() - 0.01).abs() < 1e-15);
        assert!((super_gaussian_envelope(16.0, &p).unwrap() - 0.01).abs() < 1e-15);
        // 40-digit reference value
        let quarter = super_gaussian_envelope(4.0, &p).unwrap();
        assert!((quarter - 0.995_512_860_915_850_2).abs() < 1e-15);
        let q = DrivePulse::new(2.5, 10.0, 3, 0.2).unwrap();
        assert_eq!(super_gaussian_envelope(5.0, &q).unwrap(), 2.5);
    }

    #[test]
    fn envelope_rejects_times_outside_pulse() {
        let p = pulse(1.0, 0.01);
        assert!(matches!(super_gaussian_envelope(-0.1, &p), Err(Error::Domain(_))));
        assert!(matches!(super_gaussian_envelope(16.01, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_pulses_are_rejected() {
        assert!(DrivePulse::new(1.0, 16.0, 5, 0.0).is_err());
        assert!(DrivePulse::new(1.0, 16.0, 5, 1.0).is_err());
        assert!(DrivePulse::new(1.0, 16.0, 0, 0.5).is_err());
        assert!(DrivePulse::new(-1.0, 16.0, 5, 0.5).is_err());
        assert!(DrivePulse::new(1.0, 0.0, 5, 0.5).is_err());
    }

    #[test]
    fn area_of_zero_drive_is_zero() {
        assert_eq!(effective_pulse_area(&pulse(0.0, 0.01), 0.01).unwrap(), 0.0);
    }

    #[test]
    fn area_of_near_rectangle_is_duration() {
        let p = pulse(1.0, 1.0 - 1e-12);
        let area = effective_pulse_area(&p, 0.01).unwrap();
        assert!((area - 16.0).abs() < 1e-9, "{area}");
    }

    #[test]
    fn area_matches_adaptive_quadrature() {
        let p = pulse(1.0, 0.01);
        let oracle = adaptive_simpson(&|t| p.shape(t), 0.0, 16.0, 1e-12);
        // mpmath gives 13.062827273182760453...
        assert!((oracle - 13.062_827_273_182_76).abs() < 1e-9);
        let area = effective_pulse_area(&p, DEFAULT_AREA_STEP).unwrap();
        assert!(((area - oracle) / oracle).abs() < 1e-6, "{area} vs {oracle}");
    }

    #[test]
    fn area_step_validation() {
        let p = pulse(1.0, 0.01);
        // 8 intervals
        assert!(matches!(effective_pulse_area(&p, 2.0), Err(Error::Precision(_))));
        // 16 intervals, but nowhere near converged for the steep fifth-order edges
        assert!(matches!(effective_pulse_area(&p, 1.0), Err(Error::Precision(_))));
        assert!(matches!(effective_pulse_area(&p, 0.3), Err(Error::Domain(_))));
        assert!(effective_pulse_area(&p, 0.0).is_err());
    }

    #[test]
    fn with_area_hits_target() {
        let p = DrivePulse::standard(FRAC_PI_2).unwrap();
        let theta = effective_pulse_area(&p, DEFAULT_AREA_STEP).unwrap();
        assert!((theta - FRAC_PI_2).abs() < 1e-12);
        let s = PreparationState::from_pulse(&p, DEFAULT_AREA_STEP).unwrap();
        assert!((s.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn partial_area_reaches_full_area() {
        let p = DrivePulse::standard(PI).unwrap();
        let full = partial_pulse_area(&p, 16.0, DEFAULT_AREA_STEP);
        assert!((full - PI).abs() < 1e-12);
        assert_eq!(partial_pulse_area(&p, 0.0, DEFAULT_AREA_STEP), 0.0);
        let half = partial_pulse_area(&p, 8.0, DEFAULT_AREA_STEP);
        assert!((half - PI / 2.0).abs() < 1e-9, "{half}");
    }

    #[test]
    fn emission_expectation_examples() {
        let lt = FRAC_PI_2;
        let ground = PreparationState::new(0.0, 1.3);
        assert_eq!(emission_expectation(&ground, 1.0, lt).norm(), 0.0);

        let plus = PreparationState::new(FRAC_PI_2, 0.0);
        let a = emission_expectation(&plus, 1.0, lt);
        assert!(a.re.abs() < 1e-15 && (a.im + 0.5).abs() < 1e-15);
        assert!((a.arg().rem_euclid(2.0 * PI) - 1.5 * PI).abs() < 1e-12);

        let minus = PreparationState::new(1.5 * PI, 0.0);
        let b = emission_expectation(&minus, 1.0, lt);
        assert!(b.re.abs() < 1e-15 && (b.im - 0.5).abs() < 1e-15);
        assert!((b.arg() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn wavepacket_envelope_examples() {
        assert_eq!(wavepacket_envelope(0.0, 20.5), 1.0);
        assert!((wavepacket_envelope(41.0, 20.5) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((wavepacket_envelope(2.0 * 7.0, 7.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn azimuth_is_wrapped() {
        assert!((PreparationState::new(1.0, 3.0 * PI).phi - PI).abs() < 1e-12);
        assert!((PreparationState::new(1.0, -PI).phi - PI).abs() < 1e-12);
        assert!((PreparationState::new(1.0, -0.5).phi + 0.5).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn expectation_bounded(theta in -20.0f64..20.0, phi in -4.0f64..4.0, lt in 0.0f64..50.0) {
                let s = PreparationState::new(theta, phi);
                prop_assert!(emission_expectation(&s, 1.0, lt).norm() <= 0.5 + 1e-15);
            }

            #[test]
            fn expectation_vanishes_at_multiples_of_pi(k in -6i32..6, phi in -3.0f64..3.0, lt in 0.0f64..10.0) {
                let s = PreparationState::new(k as f64 * PI, phi);
                prop_assert!(emission_expectation(&s, 1.0, lt).norm() < 1e-14);
            }

            #[test]
            fn opposite_superpositions_differ_by_pi(phi in -3.0f64..3.0, lt in 0.05f64..3.09) {
                let a = emission_expectation(&PreparationState::new(FRAC_PI_2, phi), 1.0, lt);
                let b = emission_expectation(&PreparationState::new(1.5 * PI, phi), 1.0, lt);
                let d = (a.arg() - b.arg()).rem_euclid(2.0 * PI);
                prop_assert!((d - PI).abs() < 1e-9);
            }

            #[test]
            fn area_linear_in_amplitude(c in 0.0f64..5.0) {
                let base = pulse(0.7, 0.05);
                let scaled = pulse(0.7 * c, 0.05);
                let a = effective_pulse_area(&base, 0.01).unwrap();
                let b = effective_pulse_area(&scaled, 0.01).unwrap();
                prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
            }

            #[test]
            fn envelope_symmetric(t in 0.0f64..16.0, n in 1u32..8, alpha in 0.001f64..0.99) {
                let p = DrivePulse::new(1.3, 16.0, n, alpha).unwrap();
                let l = super_gaussian_envelope(t, &p).unwrap();
                let r = super_gaussian_envelope(16.0 - t, &p).unwrap();
                prop_assert!((l - r).abs() < 1e-12);
            }
        }
    }
}
