//! Closed-form phase sharpness of averaged heterodyne signals.

pub mod bessel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use bessel::{bessel_i0, bessel_i0e, bessel_i1, bessel_i1e};
use bessel::{i0e_unchecked, i1e_unchecked};

/// Above this `M` the binomial sum skips terms below `1e-16` of the largest.
const TRUNCATE_ABOVE_M: u64 = 10_000;
const TRUNCATION: f64 = 1e-16;

/// Emission probability `p`, single-shot amplitude SNR `eta` and averaging count `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticEmissionParams {
    pub p: f64,
    pub eta: f64,
    pub m: u64,
}

impl StochasticEmissionParams {
    pub fn new(p: f64, eta: f64, m: u64) -> Result<Self> {
        let params = StochasticEmissionParams { p, eta, m };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::domain(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.m == 0 {
            return Err(Error::domain("M must be at least 1"));
        }
        Ok(())
    }
}

/// Parameters of `A exp(-t_start/tau1) T^beta exp(-T/tau2) + C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceParams {
    pub a: f64,
    pub tau1: f64,
    pub beta: f64,
    pub tau2: f64,
    pub c: f64,
}

impl SurfaceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a >= 0.0
            && self.c >= 0.0
            && self.tau1 > 0.0
            && self.tau2 > 0.0
            && (0.0..=1.0).contains(&self.beta)
            && [self.a, self.tau1, self.beta, self.tau2, self.c]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid surface parameters {self:?}")))
        }
    }
}

/// Mean resultant length of the phase of a fixed complex signal in circular
/// Gaussian noise, `rho` being the signal amplitude over the noise rms:
/// `(sqrt(pi)/2) rho exp(-rho^2/2) [I0(rho^2/2) + I1(rho^2/2)]`.
///
/// Returns NaN for negative `rho`.
pub fn r_det(rho: f64) -> f64 {
    if rho.is_nan() || rho < 0.0 {
        return f64::NAN;
    }
    if rho.is_infinite() {
        return 1.0;
    }
    let x = 0.5 * rho * rho;
    let r = 0.5 * std::f64::consts::PI.sqrt() * rho * (i0e_unchecked(x) + i1e_unchecked(x));
    r.min(1.0)
}

/// `C(M, k) p^k (1-p)^(M-k)`.
pub fn binomial_pmf(m: u64, k: u64, p: f64) -> Result<f64> {
    if k > m {
        return Err(Error::domain(format!("k = {k} exceeds M = {m}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
    }
    Ok(pmf(m, k, p))
}

fn pmf(m: u64, k: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == m { 1.0 } else { 0.0 };
    }
    if m <= 50 {
        let k_small = k.min(m - k);
        let mut choose = 1.0;
        for j in 0..k_small {
            choose = choose * (m - j) as f64 / (j + 1) as f64;
        }
        choose * p.powi(k as i32) * (1.0 - p).powi((m - k) as i32)
    } else {
        log_pmf(m, k, p).exp()
    }
}

fn log_pmf(m: u64, k: u64, p: f64) -> f64 {
    let (mf, kf) = (m as f64, k as f64);
    libm::lgamma(mf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(mf - kf + 1.0)
        + kf * p.ln()
        + (mf - kf) * (-p).ln_1p()
}

/// `rho_k = k eta / sqrt(M)`.
pub fn effective_snr(k: u64, eta: f64, m: u64) -> f64 {
    k as f64 * eta / (m as f64).sqrt()
}

/// Mean resultant length of `M`-shot averages when each shot emits with
/// probability `p`: the binomial mixture of [`r_det`].
pub fn r_predicted(params: &StochasticEmissionParams) -> f64 {
    let StochasticEmissionParams { p, eta, m } = *params;
    let term = |k: u64| pmf(m, k, p) * r_det(effective_snr(k, eta, m));
    if p == 0.0 || eta == 0.0 {
        return 0.0;
    }
    if m <= TRUNCATE_ABOVE_M || p == 1.0 {
        return (0..=m).map(term).sum();
    }
    // walk outwards from the mode until the pmf falls below the cut
    let mode = (((m + 1) as f64) * p).floor().min(m as f64) as u64;
    let cut = log_pmf(m, mode, p) + TRUNCATION.ln();
    let mut sum = term(mode);
    for k in (0..mode).rev() {
        if log_pmf(m, k, p) < cut {
            break;
        }
        sum += term(k);
    }
    for k in mode + 1..=m {
        if log_pmf(m, k, p) < cut {
            break;
        }
        sum += term(k);
    }
    sum
}

/// `A exp(-t_start/tau1) T^beta exp(-T/tau2) + C`; `window` must be positive.
pub fn r_phenomenological(t_start: f64, window: f64, params: &SurfaceParams) -> f64 {
    let SurfaceParams { a, tau1, beta, tau2, c } = *params;
    a * (-t_start / tau1).exp() * window.powf(beta) * (-window / tau2).exp() + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution, StandardNormal};
    use std::f64::consts::PI;

    // First circular moment of the phase of rho + n, n circular Gaussian with
    // unit total variance, from the closed-form phase density
    // p(phi) = e^(-rho^2)/(2 pi) [1 + sqrt(pi) b e^(b^2) erfc(-b)], b = rho cos(phi),
    // integrated with the periodic trapezoid rule.
    fn rician_phase_oracle(rho: f64) -> f64 {
        let n = 4096;
        let h = 2.0 * PI / n as f64;
        let mut acc = 0.0;
        for j in 0..n {
            let phi = j as f64 * h;
            let b = rho * phi.cos();
            let density = ((-rho * rho).exp()
                + PI.sqrt() * b * (b * b - rho * rho).exp() * libm::erfc(-b))
                / (2.0 * PI);
            acc += phi.cos() * density;
        }
        acc * h
    }

    #[test]
    fn oracle_is_a_normalised_density() {
        let rho: f64 = 1.7;
        let n = 4096;
        let h = 2.0 * PI / n as f64;
        let total: f64 = (0..n)
            .map(|j| {
                let b = rho * (j as f64 * h).cos();
                ((-rho * rho).exp() + PI.sqrt() * b * (b * b - rho * rho).exp() * libm::erfc(-b))
                    / (2.0 * PI)
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn r_det_matches_rician_phase_oracle() {
        for rho in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let want = rician_phase_oracle(rho);
            let got = r_det(rho);
            assert!(((got - want) / want).abs() < 1e-8, "rho={rho}: {got} vs {want}");
        }
        assert!((r_det(1.0) - 0.7103).abs() < 1e-4);
    }

    #[test]
    fn r_det_limits() {
        assert_eq!(r_det(0.0), 0.0);
        assert!(r_det(50.0) >= 0.999);
        assert!(r_det(1e6) <= 1.0 && r_det(1e6) > 1.0 - 1e-9);
        assert_eq!(r_det(f64::INFINITY), 1.0);
        assert!(r_det(-1.0).is_nan());
        // small-rho slope sqrt(pi)/2
        assert!((r_det(1e-6) / 1e-6 - PI.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn r_det_increasing_and_bounded() {
        let mut prev = 0.0;
        for i in 1..20_000 {
            let r = r_det(i as f64 * 0.001);
            assert!(r > prev || r == 1.0, "at {}", i as f64 * 0.001);
            assert!(r <= 1.0);
            prev = r;
        }
    }

    #[test]
    fn binomial_pmf_examples() {
        assert_eq!(binomial_pmf(5, 0, 0.0).unwrap(), 1.0);
        assert_eq!(binomial_pmf(5, 2, 0.0).unwrap(), 0.0);
        assert!((binomial_pmf(2, 1, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let total: f64 = (0..=30).map(|k| binomial_pmf(30, k, 0.37).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let total: f64 = (0..=3000).map(|k| binomial_pmf(3000, k, 0.37).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(matches!(binomial_pmf(3, 4, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn log_space_branch_agrees_with_direct_product() {
        // M = 51 takes the log path; compare with the exact recurrence
        let (m, p) = (51u64, 0.3f64);
        let mut exact = (1.0 - p).powi(51);
        for k in 0..=m {
            let got = binomial_pmf(m, k, p).unwrap();
            assert!((got - exact).abs() <= 1e-12 * exact.max(1e-300), "k={k}");
            exact *= (m - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        }
    }

    #[test]
    fn effective_snr_examples() {
        assert_eq!(effective_snr(0, 0.7, 9), 0.0);
        assert!((effective_snr(9, 0.7, 9) - 0.7 * 3.0).abs() < 1e-15);
        assert!((effective_snr(3, 0.1, 9) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn r_predicted_high_snr_single_shot_is_p() {
        for p in [0.0, 0.25, 0.3, 0.5, 1.0] {
            let r = r_predicted(&StochasticEmissionParams::new(p, 1e6, 1).unwrap());
            assert!((r - p).abs() < 1e-6, "{p}: {r}");
        }
    }

    #[test]
    fn r_predicted_deterministic_case_is_r_det() {
        for m in [1, 7, 64, 20_000] {
            let r = r_predicted(&StochasticEmissionParams::new(1.0, 0.02, m).unwrap());
            assert!((r - r_det(0.02 * (m as f64).sqrt())).abs() < 1e-15);
        }
    }

    #[test]
    fn truncated_sum_matches_full_sum() {
        let params = StochasticEmissionParams::new(0.4, 0.01, 20_000).unwrap();
        let full: f64 = (0..=params.m)
            .map(|k| pmf(params.m, k, 0.4) * r_det(effective_snr(k, 0.01, params.m)))
            .sum();
        assert!((r_predicted(&params) - full).abs() < 1e-13);
    }

    #[test]
    fn r_predicted_monotone_in_each_argument() {
        let ps = [0.05, 0.1, 0.3, 0.6, 1.0];
        let etas = [0.01, 0.1, 0.5, 1.0, 3.0];
        let ms = [1, 2, 4, 16, 64, 256, 1024];
        let r = |p, eta, m| r_predicted(&StochasticEmissionParams::new(p, eta, m).unwrap());
        for &m in &ms {
            for &eta in &etas {
                for w in ps.windows(2) {
                    assert!(r(w[1], eta, m) >= r(w[0], eta, m) - 1e-15);
                }
            }
            for &p in &ps {
                for w in etas.windows(2) {
                    assert!(r(p, w[1], m) >= r(p, w[0], m) - 1e-15);
                }
            }
        }
        for &p in &ps {
            for &eta in &etas {
                for w in ms.windows(2) {
                    assert!(r(p, eta, w[1]) >= r(p, eta, w[0]) - 1e-15, "p={p} eta={eta} m={:?}", w);
                }
            }
        }
    }

    #[test]
    fn stochastic_emission_never_beats_deterministic() {
        for m in [1, 4, 32, 500] {
            for eta in [0.05, 0.4, 2.0] {
                for p in [0.1, 0.5, 0.9] {
                    let r = r_predicted(&StochasticEmissionParams::new(p, eta, m).unwrap());
                    assert!(r_det(eta * (m as f64).sqrt()) >= r);
                }
            }
        }
    }

    fn collapse_spread(m: u64, p_eta: f64) -> f64 {
        let vals: Vec<f64> = (0..=38)
            .map(|i| 0.05 + 0.025 * i as f64)
            .map(|p| r_predicted(&StochasticEmissionParams::new(p, p_eta / p, m).unwrap()))
            .collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }

    #[test]
    fn product_collapse_holds_for_long_averages() {
        for m in [1000, 2048, 4096, 20_000] {
            for i in 1..=20 {
                let p_eta = 0.01 * i as f64;
                assert!(collapse_spread(m, p_eta) <= 1e-2, "M={m} p*eta={p_eta}");
            }
        }
        for m in [100, 300] {
            for i in 1..=4 {
                let p_eta = 0.01 * i as f64;
                assert!(collapse_spread(m, p_eta) <= 1e-2, "M={m} p*eta={p_eta}");
            }
        }
    }

    #[test]
    fn product_collapse_breaks_at_moderate_m() {
        // at M = 100 the Jensen gap of r_det over the binomial spread is visible
        let spread = collapse_spread(100, 0.16);
        assert!(spread > 0.05, "{spread}");
    }

    #[test]
    fn r_predicted_matches_monte_carlo() {
        let (m, p, eta) = (4u64, 0.5, 1.0);
        let trials = 10_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let binom = Binomial::new(m, p).unwrap();
        let noise = (1.0 / (2.0 * m as f64)).sqrt();
        let (mut sc, mut ss, mut sc2) = (0.0, 0.0, 0.0);
        for _ in 0..trials {
            let k = binom.sample(&mut rng) as f64;
            let re = k * eta / m as f64 + noise * rng.sample::<f64, _>(StandardNormal);
            let im = noise * rng.sample::<f64, _>(StandardNormal);
            let norm = re.hypot(im);
            let c = re / norm;
            sc += c;
            sc2 += c * c;
            ss += im / norm;
        }
        let n = trials as f64;
        let r_mc = (sc / n).hypot(ss / n);
        let se = ((sc2 / n - (sc / n).powi(2)) / n).sqrt();
        let want = r_predicted(&StochasticEmissionParams::new(p, eta, m).unwrap());
        assert!((r_mc - want).abs() < 3.0 * se, "{r_mc} vs {want} (se {se})");
    }

    #[test]
    fn phenomenological_examples() {
        let zero = SurfaceParams { a: 0.0, tau1: 37.0, beta: 0.37, tau2: 105.0, c: 0.02 };
        assert_eq!(r_phenomenological(10.0, 20.0, &zero), 0.02);
        let p = SurfaceParams { a: 0.3, tau1: 37.0, beta: 0.0, tau2: 105.0, c: 0.02 };
        let v = r_phenomenological(37.0, 105.0, &p);
        assert!((v - (0.3 * (-2.0f64).exp() + 0.02)).abs() < 1e-15);
        assert!(p.validate().is_ok());
        assert!(SurfaceParams { beta: 1.2, ..p }.validate().is_err());
        assert!(SurfaceParams { tau1: 0.0, ..p }.validate().is_err());
    }
}
