//! Parameter recovery from measured `R` curves and surfaces.

pub mod lsq;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circstats::SurfaceGrid;
use crate::emission_law::{r_det, r_phenomenological, r_predicted, StochasticEmissionParams, SurfaceParams};
use crate::error::{Error, Result};
pub use lsq::{least_squares_fit, Bound, FitOptions, FitResult, Termination};

/// `p eta` values tried before the collapsed `R(M)` fit.
const P_ETA_SCAN: usize = 80;

/// Outcome of [`fit_r_vs_m`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmFit {
    pub p_eta: f64,
    /// Separate estimates, only in two-parameter mode.
    pub p: Option<f64>,
    pub eta: Option<f64>,
    /// `||R_fit - R_obs|| / ||R_obs||`.
    pub relative_residual: f64,
    /// The estimate sits on the `p eta = 0` boundary.
    pub at_boundary: bool,
    /// Indices of observations outside `[0, 1]` that were left out.
    pub rejected: Vec<usize>,
    pub fit: FitResult,
}

/// Fits `R(M)` observations, given as `(M, R)` pairs, with the binomial emission law.
///
/// The default fits the product `p eta` alone through `r_det(p eta sqrt(M))`,
/// which is what the data constrain when `p eta` is small. With
/// `two_parameter` set, `p` and `eta` are fitted separately.
pub fn fit_r_vs_m(observations: &[(u64, f64)], two_parameter: bool) -> Result<RmFit> {
    let mut rejected = Vec::new();
    let mut kept = Vec::new();
    for (i, &(m, r)) in observations.iter().enumerate() {
        if m == 0 {
            return Err(Error::domain(format!("observation {i} has M = 0")));
        }
        if r.is_finite() && (0.0..=1.0).contains(&r) {
            kept.push((m, r));
        } else {
            rejected.push(i);
        }
    }
    let mut distinct: Vec<u64> = kept.iter().map(|o| o.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::domain(format!(
            "need at least 4 distinct M values in [0, 1] range data, got {}",
            distinct.len()
        )));
    }
    let ms: Vec<u64> = kept.iter().map(|o| o.0).collect();
    let rs: Vec<f64> = kept.iter().map(|o| o.1).collect();

    let collapsed = |x: &[f64], m: &u64| r_det(x[0] * (*m as f64).sqrt());
    let sse = |pe: f64| -> f64 {
        ms.iter().zip(&rs).map(|(m, r)| (collapsed(&[pe], m) - r).powi(2)).sum()
    };
    // scan 0 and a log grid from 1e-4 to 10
    let scan = std::iter::once(0.0)
        .chain((0..P_ETA_SCAN).map(|i| 1e-4 * 10f64.powf(5.0 * i as f64 / (P_ETA_SCAN - 1) as f64)));
    let init = scan.fold((f64::INFINITY, 0.0), |best, pe| {
        let s = sse(pe);
        if s < best.0 {
            (s, pe)
        } else {
            best
        }
    });

    let options = FitOptions::default();
    let fit = least_squares_fit(collapsed, &ms, &rs, &["p_eta"], &[init.1], &[Bound::Lower(0.0)], &options)?;
    let mut p_eta = fit.values[0];
    let (mut p, mut eta, mut fit) = (None, None, fit);

    if two_parameter {
        let model = |x: &[f64], m: &u64| {
            r_predicted(&StochasticEmissionParams { p: x[0], eta: x[1], m: *m })
        };
        let start_eta = (2.0 * p_eta).max(1e-6);
        let two = least_squares_fit(
            model,
            &ms,
            &rs,
            &["p", "eta"],
            &[0.5, start_eta],
            &[Bound::Interval(0.0, 1.0), Bound::Lower(0.0)],
            &options,
        )?;
        p = Some(two.values[0]);
        eta = Some(two.values[1]);
        p_eta = two.values[0] * two.values[1];
        fit = two;
    }

    let obs_norm = rs.iter().map(|r| r * r).sum::<f64>().sqrt();
    let relative_residual = if obs_norm > 0.0 { fit.residual_norm / obs_norm } else { fit.residual_norm };
    Ok(RmFit {
        p_eta,
        p,
        eta,
        relative_residual,
        at_boundary: p_eta <= 1e-9,
        rejected,
        fit,
    })
}

/// Starting decay constants for the surface fit, in ns.
const TAU1_STARTS: [f64; 4] = [5.0, 20.0, 80.0, 320.0];
const TAU2_STARTS: [f64; 2] = [25.0, 250.0];
const POSITIVE_FLOOR: f64 = 1e-9;
/// Residuals closer than this (relative) count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceStart {
    pub init: SurfaceParams,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Outcome of [`fit_surface`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFit {
    pub params: SurfaceParams,
    pub converged: bool,
    /// Parameters the grid does not constrain.
    pub non_identifiable: Vec<String>,
    /// The fitted model rises above 1 somewhere on the grid.
    pub exceeds_unit: bool,
    pub best_start: usize,
    pub starts: Vec<SurfaceStart>,
    /// Solver output. Its amplitude `A_ref` is the model amplitude at the
    /// earliest start time and the geometric-mean window length.
    pub fit: FitResult,
}

fn surface_params(x: &[f64]) -> SurfaceParams {
    SurfaceParams { a: x[0], tau1: x[1], beta: x[2], tau2: x[3], c: x[4] }
}

/// The solver works with the amplitude at `(t0, w0)` instead of `A`. In `A` the
/// problem has a long curved valley along `A exp(-t0/tau1) = const`, which
/// stalls the damped steps.
#[derive(Debug, Clone, Copy)]
struct Reference {
    t0: f64,
    w0: f64,
}

impl Reference {
    fn of(points: &[(f64, f64)]) -> Self {
        let t0 = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let w0 = (points.iter().map(|p| p.1.ln()).sum::<f64>() / points.len() as f64).exp();
        Reference { t0, w0 }
    }

    fn to_solver(self, p: &SurfaceParams) -> [f64; 5] {
        let a_ref = p.a * (-self.t0 / p.tau1).exp() * self.w0.powf(p.beta);
        [a_ref, p.tau1, p.beta, p.tau2, p.c]
    }

    fn to_params(self, x: &[f64]) -> SurfaceParams {
        let mut p = surface_params(x);
        p.a = x[0] * (self.t0 / p.tau1).exp() / self.w0.powf(p.beta);
        p
    }

    fn model(self, x: &[f64], (t, w): (f64, f64)) -> f64 {
        x[0] * (-(t - self.t0) / x[1]).exp() * (w / self.w0).powf(x[2]) * (-w / x[3]).exp() + x[4]
    }
}

/// Least-squares `A` and `C` for fixed `(tau1, beta, tau2)`.
fn linear_amplitudes(points: &[(f64, f64)], values: &[f64], tau1: f64, beta: f64, tau2: f64) -> (f64, f64) {
    let n = points.len();
    let design = DMatrix::from_fn(n, 2, |i, j| {
        if j == 1 {
            1.0
        } else {
            let (t, w) = points[i];
            (-t / tau1).exp() * w.powf(beta) * (-w / tau2).exp()
        }
    });
    let rhs = DVector::from_column_slice(values);
    match design.clone().svd(true, true).solve(&rhs, 1e-12) {
        Ok(sol) => (sol[0], sol[1]),
        Err(_) => (0.0, values.iter().sum::<f64>() / n as f64),
    }
}

/// Global fit of `A exp(-t_start/tau1) T^beta exp(-T/tau2) + C` to an `R` surface.
///
/// Eight starts cover `tau1` in {5, 20, 80, 320} ns and `tau2` in {25, 250} ns with
/// `beta = 0.5`; `A` and `C` start at their linear least-squares values. The
/// lowest residual wins, ties (to 1e-12 relative) going to the earlier start.
pub fn fit_surface(grid: &SurfaceGrid) -> Result<SurfaceFit> {
    if grid.rows() < 4 || grid.cols() < 4 {
        return Err(Error::domain(format!(
            "surface fit needs at least a 4 x 4 grid, got {} x {}",
            grid.rows(),
            grid.cols()
        )));
    }
    if grid.lengths.iter().any(|&w| w.is_nan() || w <= 0.0) {
        return Err(Error::domain("window lengths must be positive"));
    }
    let mut points = Vec::with_capacity(grid.rows() * grid.cols());
    let mut values = Vec::with_capacity(points.capacity());
    for (i, &t) in grid.t_starts.iter().enumerate() {
        for (j, &w) in grid.lengths.iter().enumerate() {
            points.push((t, w));
            values.push(grid.values[i][j]);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("surface contains non-finite values"));
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);

    let reference = Reference::of(&points);
    let model = |x: &[f64], pt: &(f64, f64)| reference.model(x, *pt);
    let names = ["A_ref", "tau1", "beta", "tau2", "C"];
    let bounds = [
        Bound::Lower(0.0),
        Bound::Lower(POSITIVE_FLOOR),
        Bound::Interval(0.0, 1.0),
        Bound::Lower(POSITIVE_FLOOR),
        Bound::Lower(0.0),
    ];
    let inits: Vec<SurfaceParams> = TAU1_STARTS
        .iter()
        .flat_map(|&tau1| TAU2_STARTS.iter().map(move |&tau2| (tau1, tau2)))
        .map(|(tau1, tau2)| {
            let beta = 0.5;
            let (a, c) = linear_amplitudes(&points, &values, tau1, beta, tau2);
            // start strictly inside the bounds, where the transforms have slope
            SurfaceParams { a: a.max(1e-6 * scale), tau1, beta, tau2, c: c.max(1e-6 * scale) }
        })
        .collect();

    let options = FitOptions::default();
    let fits = inits
        .par_iter()
        .map(|s| {
            least_squares_fit(
                model,
                &points,
                &values,
                &names,
                &reference.to_solver(s),
                &bounds,
                &options,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.residual_norm < fits[best].residual_norm * (1.0 - TIE_TOLERANCE) {
            best = i;
        }
    }
    let fit = fits[best].clone();
    let params = reference.to_params(&fit.values);
    let starts = inits
        .iter()
        .zip(&fits)
        .map(|(init, f)| SurfaceStart { init: *init, residual_norm: f.residual_norm, converged: f.converged })
        .collect();

    let mut non_identifiable = Vec::new();
    let max_shape = points
        .iter()
        .map(|&(t, w)| (-t / params.tau1).exp() * w.powf(params.beta) * (-w / params.tau2).exp())
        .fold(0.0, f64::max);
    if params.a * max_shape <= 1e-6 * scale {
        non_identifiable.extend(["tau1", "beta", "tau2"].map(String::from));
    }
    if let Some(cov) = &fit.covariance_proxy {
        for (j, name) in names.iter().enumerate() {
            if !(cov[j][j].is_finite()) && !non_identifiable.iter().any(|n| n == name) {
                non_identifiable.push(name.to_string());
            }
        }
    } else if non_identifiable.is_empty() {
        non_identifiable.extend(names.map(String::from));
    }
    let exceeds_unit = points.iter().any(|&(t, w)| r_phenomenological(t, w, &params) > 1.0);

    Ok(SurfaceFit {
        params,
        converged: fits.iter().any(|f| f.converged) && fit.converged,
        non_identifiable,
        exceeds_unit,
        best_start: best,
        starts,
        fit,
    })
}

/// Share of the squared Frobenius norm carried by the leading singular value.
pub fn svd_separability(values: &[Vec<f64>]) -> Result<f64> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || values.iter().any(|r| r.len() != cols) {
        return Err(Error::domain("separability needs a rectangular grid of at least 2 x 2"));
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| values[i][j]);
    let total = m.norm_squared();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::domain("separability of a zero or non-finite grid is undefined"));
    }
    let sv = m.singular_values();
    let lead = sv.iter().cloned().fold(0.0, f64::max);
    Ok((lead * lead / total).min(1.0))
}
