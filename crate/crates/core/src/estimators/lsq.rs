//! Bounded Levenberg-Marquardt least squares with a finite-difference Jacobian.
//!
//! Bounds are enforced by reparameterisation: the optimiser works on an
//! unconstrained `u` and the model sees `x(u)`, using the square-root map for
//! one-sided bounds and the sine map for intervals.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual norm, relative to the data norm, treated as an exact fit.
const ACTIVE_BOUND_SLOPE: f64 = 1e-6;
const EXACT_FIT: f64 = 1e-10;

/// Admissible range of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Free,
    Lower(f64),
    Upper(f64),
    Interval(f64, f64),
}

impl Bound {
    fn contains(&self, x: f64) -> bool {
        match *self {
            Bound::Free => x.is_finite(),
            Bound::Lower(lo) => x >= lo,
            Bound::Upper(hi) => x <= hi,
            Bound::Interval(lo, hi) => (lo..=hi).contains(&x),
        }
    }

    fn to_internal(self, x: f64) -> f64 {
        match self {
            Bound::Free => x,
            Bound::Lower(lo) => ((x - lo + 1.0).powi(2) - 1.0).max(0.0).sqrt(),
            Bound::Upper(hi) => ((hi - x + 1.0).powi(2) - 1.0).max(0.0).sqrt(),
            Bound::Interval(lo, hi) => (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0).asin(),
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Bound::Free => u,
            Bound::Lower(lo) => lo - 1.0 + (u * u + 1.0).sqrt(),
            Bound::Upper(hi) => hi + 1.0 - (u * u + 1.0).sqrt(),
            Bound::Interval(lo, hi) => lo + 0.5 * (hi - lo) * (u.sin() + 1.0),
        }
    }

    /// `dx/du`.
    fn slope(&self, u: f64) -> f64 {
        match *self {
            Bound::Free => 1.0,
            Bound::Lower(_) => u / (u * u + 1.0).sqrt(),
            Bound::Upper(_) => -u / (u * u + 1.0).sqrt(),
            Bound::Interval(lo, hi) => 0.5 * (hi - lo) * u.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative step size below which iteration stops.
    pub step_tolerance: f64,
    /// Infinity norm of the gradient below which iteration stops.
    pub gradient_tolerance: f64,
    /// Relative central-difference step.
    pub jacobian_step: f64,
    /// Largest cosine between the residual and a Jacobian column still counted
    /// as stationary when iteration stops on a small step.
    pub scaled_gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            jacobian_step: 1e-6,
            scaled_gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    /// Damping grew past `1e16` without finding a downhill step.
    DampingExhausted,
    /// The model does not depend on any parameter.
    SingularJacobian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub parameter_estimates: BTreeMap<String, f64>,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Infinity norm of the gradient in the internal coordinates.
    pub gradient_norm: f64,
    /// Largest cosine between the residual and a Jacobian column.
    pub scaled_gradient: f64,
    /// `s^2 (J^T J)^-1` in the external coordinates; `None` when singular.
    pub covariance_proxy: Option<Vec<Vec<f64>>>,
    /// Residual norm after each accepted step, starting with the initial point.
    pub residual_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameter_estimates.get(name).copied()
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        let v = self.covariance_proxy.as_ref()?[j][j];
        (v >= 0.0 && v.is_finite()).then(|| v.sqrt())
    }
}

/// Minimises `sum (model(x, input_i) - observation_i)^2` over `x` within `bounds`.
///
/// Non-convergence is reported through [`FitResult::converged`], not as an error.
pub fn least_squares_fit<X, F>(
    model: F,
    inputs: &[X],
    observations: &[f64],
    names: &[&str],
    init: &[f64],
    bounds: &[Bound],
    options: &FitOptions,
) -> Result<FitResult>
where
    F: Fn(&[f64], &X) -> f64,
{
    let n = observations.len();
    let p = init.len();
    if n == 0 {
        return Err(Error::domain("no observations to fit"));
    }
    if inputs.len() != n {
        return Err(Error::domain(format!("{} inputs for {n} observations", inputs.len())));
    }
    if p == 0 || names.len() != p || bounds.len() != p {
        return Err(Error::domain("parameter names, initial values and bounds must match"));
    }
    if observations.iter().any(|y| !y.is_finite()) {
        return Err(Error::domain("observations must be finite"));
    }
    for ((name, &x), b) in names.iter().zip(init).zip(bounds) {
        if !b.contains(x) || !x.is_finite() {
            return Err(Error::domain(format!("initial {name} = {x} violates {b:?}")));
        }
    }

    let external = |u: &DVector<f64>| -> Vec<f64> {
        u.iter().zip(bounds).map(|(&ui, b)| b.to_external(ui)).collect()
    };
    let residuals = |u: &DVector<f64>| -> DVector<f64> {
        let x = external(u);
        DVector::from_iterator(
            n,
            inputs.iter().zip(observations).map(|(inp, y)| model(&x, inp) - y),
        )
    };
    let jacobian = |u: &DVector<f64>| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(n, p);
        for j in 0..p {
            let h = options.jacobian_step * u[j].abs().max(1.0);
            let mut up = u.clone();
            up[j] += h;
            let mut down = u.clone();
            down[j] -= h;
            let col = (residuals(&up) - residuals(&down)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    };

    let mut u = DVector::from_iterator(p, init.iter().zip(bounds).map(|(&x, b)| b.to_internal(x)));
    let mut r = residuals(&u);
    let mut cost = 0.5 * r.norm_squared();
    let mut jac = jacobian(&u);
    let mut history = vec![r.norm()];

    let mut a = jac.transpose() * &jac;
    let mut g = jac.transpose() * &r;
    let max_diag = (0..p).map(|j| a[(j, j)]).fold(0.0, f64::max);
    let mut lambda = 1e-3 * max_diag.max(f64::MIN_POSITIVE);
    // Damping scale per parameter: the largest diagonal seen so far. A parameter
    // pinned at a bound has a vanishing column, and damping by the current
    // diagonal would let its steps overshoot while lambda grows without end.
    let mut scale: Vec<f64> = (0..p).map(|j| a[(j, j)]).collect();
    let mut nu = 2.0;
    let mut iterations = 0;

    let termination = loop {
        if !cost.is_finite() {
            break Termination::DampingExhausted;
        }
        if g.amax() < options.gradient_tolerance {
            if jac.amax() == 0.0 && cost > 0.0 {
                break Termination::SingularJacobian;
            }
            break Termination::Gradient;
        }
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        if lambda > 1e16 {
            break Termination::DampingExhausted;
        }
        iterations += 1;

        let max_scale = scale.iter().copied().fold(0.0, f64::max);
        let mut damped = a.clone();
        for j in 0..p {
            damped[(j, j)] += lambda * scale[j].max(1e-12 * max_scale).max(f64::MIN_POSITIVE);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&g));
        let tiny = step.norm() <= options.step_tolerance * (u.norm() + options.step_tolerance);
        let trial = &u + &step;
        let r_trial = residuals(&trial);
        let cost_trial = 0.5 * r_trial.norm_squared();
        let predicted = -g.dot(&step) - 0.5 * step.dot(&(&a * &step));
        let gain = (cost - cost_trial) / predicted;
        let accepted = cost_trial < cost && gain > 0.0;
        if accepted {
            u = trial;
            r = r_trial;
            cost = cost_trial;
            history.push(r.norm());
        }
        if tiny && accepted {
            // the Jacobian is not refreshed for the last small step
            g = jac.transpose() * &r;
            break Termination::Step;
        }
        if accepted {
            jac = jacobian(&u);
            a = jac.transpose() * &jac;
            g = jac.transpose() * &r;
            for (j, s) in scale.iter_mut().enumerate() {
                *s = s.max(a[(j, j)]);
            }
            lambda *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
    };

    let r_norm = r.norm();
    // a parameter held at a bound is stationary in u whatever the pull in x
    let at_bound = |j: usize| bounds[j].slope(u[j]).abs() <= ACTIVE_BOUND_SLOPE;
    let scaled_gradient = (0..p)
        .map(|j| {
            let col = jac.column(j).norm();
            if col == 0.0 || r_norm == 0.0 || at_bound(j) {
                0.0
            } else {
                g[j].abs() / (col * r_norm)
            }
        })
        .fold(0.0, f64::max);
    // an exact fit leaves rounding noise whose direction says nothing about stationarity
    let y_norm = observations.iter().map(|y| y * y).sum::<f64>().sqrt();
    let exact = r_norm <= EXACT_FIT * y_norm;
    let converged = match termination {
        Termination::Gradient => true,
        Termination::Step | Termination::DampingExhausted => {
            exact || scaled_gradient <= options.scaled_gradient_tolerance
        }
        _ => false,
    };

    let values = external(&u);
    let covariance_proxy = (a.clone()).try_inverse().and_then(|inv| {
        let dof = if n > p { (n - p) as f64 } else { 1.0 };
        let s2 = r.norm_squared() / dof;
        let slopes: Vec<f64> = u.iter().zip(bounds).map(|(&ui, b)| b.slope(ui)).collect();
        let cov: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| s2 * slopes[i] * inv[(i, j)] * slopes[j]).collect())
            .collect();
        cov.iter().flatten().all(|v| v.is_finite()).then_some(cov)
    });

    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        parameter_estimates: names.iter().map(|s| s.to_string()).zip(values.iter().copied()).collect(),
        values,
        residual_norm: r_norm,
        iterations,
        converged,
        termination,
        gradient_norm: g.amax(),
        scaled_gradient,
        covariance_proxy,
        residual_history: history,
    })
}
