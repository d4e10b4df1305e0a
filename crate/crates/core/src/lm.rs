//! Levenberg-Marquardt damped least squares and the exponential dwell-density fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dwell::{DwellHistogram, EmpiricalDensity};
use crate::error::{domain, BlinkError, Result};
use crate::estimate::{Method, RateEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub lambda0: f64,
    /// Damping multiplier after a rejected step (> 1).
    pub lambda_up: f64,
    /// Damping multiplier after an accepted step (< 1).
    pub lambda_down: f64,
    pub max_iter: usize,
    /// Relative cost-reduction tolerance.
    pub ftol: f64,
    /// Relative step-size tolerance.
    pub xtol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_iter: 200,
            ftol: 1e-10,
            xtol: 1e-10,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.lambda_up > 1.0 && self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return domain("LM damping must be positive with up > 1 and 0 < down < 1");
        }
        if !(self.ftol > 0.0 && self.xtol > 0.0) {
            return domain("LM tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Half sum of squared residuals at the solution.
    pub cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: DVector<f64>,
    /// `s^2 (J^T J)^-1` with `s^2 = SSR / (m - n)`; `None` when singular
    /// or when there are no spare degrees of freedom.
    pub covariance: Option<DMatrix<f64>>,
    pub report: LmReport,
}

fn half_sq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Minimizes `0.5 * |r(x)|^2`.
///
/// Each iteration solves `(J^T J + lambda diag(J^T J)) delta = -J^T r`; a
/// step is accepted only if the cost drops, after which lambda shrinks,
/// otherwise lambda grows and the step is retried.
pub fn lm_solve<R, J>(residual: R, jacobian: J, init: DVector<f64>, config: &LmConfig) -> Result<LmSolution>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    config.validate()?;
    let mut x = init;
    let mut r = residual(&x);
    if x.iter().chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(BlinkError::Divergence("initial point is not finite".into()));
    }
    let mut cost = half_sq(&r);
    let mut lambda = config.lambda0;
    let mut history = vec![cost];
    let mut accepted = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    let mut jac = jacobian(&x);
    if jac.nrows() != r.len() || jac.ncols() != x.len() {
        return domain("Jacobian shape does not match residual and parameter counts");
    }

    if cost == 0.0 {
        converged = true;
    }
    while !converged && iterations < config.max_iter {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.iter().all(|g| *g == 0.0) {
            converged = true;
            break;
        }
        let mut damped = jtj.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += lambda * jtj[(i, i)];
        }
        let step = damped
            .cholesky()
            .ok_or_else(|| BlinkError::Divergence("damped normal matrix is singular".into()))?
            .solve(&(-&grad));
        let x_new = &x + &step;
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(BlinkError::Divergence("parameters became non-finite".into()));
        }
        let r_new = residual(&x_new);
        let cost_new = if r_new.iter().all(|v| v.is_finite()) {
            half_sq(&r_new)
        } else {
            f64::INFINITY
        };

        if cost_new < cost {
            let reduction = (cost - cost_new) / cost;
            let small_step = step.norm() <= config.xtol * (x.norm() + config.xtol);
            x = x_new;
            r = r_new;
            cost = cost_new;
            history.push(cost);
            accepted += 1;
            lambda *= config.lambda_down;
            if reduction <= config.ftol || small_step || cost == 0.0 {
                converged = true;
                break;
            }
            jac = jacobian(&x);
        } else {
            lambda *= config.lambda_up;
            // no descent possible at any damping: x is a stationary point
            if lambda > 1e16 {
                converged = true;
                break;
            }
        }
    }

    let m = r.len();
    let n = x.len();
    let covariance = if m > n {
        let jtj = jac.transpose() * &jac;
        jtj.try_inverse()
            .map(|inv| inv * (2.0 * cost / (m - n) as f64))
            .filter(|c| c.iter().all(|v| v.is_finite()))
    } else {
        None
    };
    Ok(LmSolution {
        params: x,
        covariance,
        report: LmReport {
            iterations,
            accepted_steps: accepted,
            cost,
            cost_history: history,
            converged,
        },
    })
}

/// Parameters of `y0 + A exp(-t / tau)`; `tau` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFitParams {
    pub y0: f64,
    pub amplitude: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitInit {
    Auto,
    Given(ExpFitParams),
}

/// Detailed result of [`fit_exponential`].
#[derive(Debug, Clone)]
pub struct ExpFit {
    pub params: ExpFitParams,
    pub tau_std_err: f64,
    pub report: LmReport,
}

impl ExpFit {
    pub fn to_estimate(&self) -> RateEstimate {
        let ok = self.report.converged
            && self.params.tau > 0.0
            && self.params.tau.is_finite()
            && self.tau_std_err.is_finite();
        RateEstimate::new(Method::Lm, self.params.tau, self.tau_std_err, ok)
            .with_diag("iterations", self.report.iterations as f64)
            .with_diag("accepted_steps", self.report.accepted_steps as f64)
            .with_diag("cost", self.report.cost)
            .with_diag("y0", self.params.y0)
            .with_diag("amplitude", self.params.amplitude)
    }
}

/// Unweighted least-squares fit of the dwell density to `y0 + A exp(-t/tau)`.
///
/// Fitting happens in bin units; `tau` is reported in seconds.
pub fn fit_exponential(density: &EmpiricalDensity, init: FitInit, config: &LmConfig) -> Result<ExpFit> {
    let m = density.support.len();
    if m < 4 {
        return Err(BlinkError::InsufficientData {
            what: "density support points",
            needed: 4,
            got: m,
        });
    }
    let bw = density.bin_width;
    let t: Vec<f64> = density.support.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = density.support.iter().map(|p| p.1).collect();

    let start = match init {
        FitInit::Given(p) => p,
        FitInit::Auto => {
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ExpFitParams {
                y0: lo,
                amplitude: hi - lo,
                tau: density.mean_duration(),
            }
        }
    };
    let x0 = DVector::from_vec(vec![start.y0, start.amplitude, start.tau / bw]);

    let residual = |p: &DVector<f64>| {
        DVector::from_iterator(
            m,
            t.iter().zip(&y).map(|(&ti, &yi)| p[0] + p[1] * (-ti / p[2]).exp() - yi),
        )
    };
    let jacobian = |p: &DVector<f64>| {
        let mut jm = DMatrix::zeros(m, 3);
        for (i, &ti) in t.iter().enumerate() {
            let e = (-ti / p[2]).exp();
            jm[(i, 0)] = 1.0;
            jm[(i, 1)] = e;
            jm[(i, 2)] = p[1] * e * ti / (p[2] * p[2]);
        }
        jm
    };
    let sol = lm_solve(residual, jacobian, x0, config)?;
    let p = &sol.params;
    let tau_std_err = sol
        .covariance
        .as_ref()
        .map(|c| c[(2, 2)].max(0.0).sqrt() * bw)
        .unwrap_or(f64::INFINITY);
    Ok(ExpFit {
        params: ExpFitParams {
            y0: p[0],
            amplitude: p[1],
            tau: p[2] * bw,
        },
        tau_std_err,
        report: sol.report,
    })
}

/// The L-M baseline on a dwell histogram, with every failure mode folded
/// into a non-converged estimate: too few support points, divergence,
/// iteration cap, or `tau` outside `(0, 100 * heuristic)`.
pub fn estimate_lm(hist: &DwellHistogram, tau_range: (f64, f64), config: &LmConfig) -> RateEstimate {
    let density = match crate::dwell::empirical_density(hist) {
        Ok(d) => d,
        Err(_) => return RateEstimate::failed(Method::Lm, "empty_histogram"),
    };
    let fit = match fit_exponential(&density, FitInit::Auto, config) {
        Ok(f) => f,
        Err(BlinkError::InsufficientData { .. }) => return RateEstimate::failed(Method::Lm, "insufficient_data"),
        Err(_) => return RateEstimate::failed(Method::Lm, "divergence"),
    };
    let mut est = fit.to_estimate();
    if let Ok(h) = crate::ga::heuristic_estimate(hist, tau_range) {
        est.diagnostics.insert("tau_heuristic".into(), h);
        if !(est.tau_hat > 0.0 && est.tau_hat < 100.0 * h) {
            est.converged = false;
        }
    }
    est
}
