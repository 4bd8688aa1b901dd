//! Categorical importance-weight estimators.
//!
//! Both estimators solve for the shift `theta = omega - 1` in `T theta = q - p`:
//!
//! * [`e1_direct`]: `theta = pinv(T_hat) (q_hat - p_hat)`.
//! * [`e2_regularized`]: `argmin |T_hat theta - (q_hat - p_hat)| + delta_T |theta|` with
//!   unsquared Euclidean norms.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::moments::MomentEstimates;

/// Relative cutoff for treating a singular value of `T_hat` as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CategoricalMethod {
    E1,
    E2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDiagnostics {
    /// Smallest singular value of `T_hat` (zero when `d < k`).
    pub smallest_singular_value: f64,
    /// `|pinv(T_hat)|`, the empirical stand-in for the population `|T^dagger|`.
    pub inverse_norm: f64,
    /// `|theta_hat|` exceeds the supplied cap (E2 only).
    pub exceeds_theta_cap: bool,
    pub iterations: usize,
    /// Objective of the incumbent after each iteration (E2 only).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalWeightEstimate {
    pub theta_hat: DVector<f64>,
    /// `1 + theta_hat`, unclamped.
    pub omega_hat: DVector<f64>,
    pub method: CategoricalMethod,
    pub diagnostics: CategoricalDiagnostics,
}

impl CategoricalWeightEstimate {
    fn new(
        theta_hat: DVector<f64>,
        method: CategoricalMethod,
        diagnostics: CategoricalDiagnostics,
    ) -> Self {
        let omega_hat = theta_hat.map(|t| 1.0 + t);
        Self {
            theta_hat,
            omega_hat,
            method,
            diagnostics,
        }
    }
}

fn spectrum(t: &DMatrix<f64>) -> (Vec<f64>, f64, f64) {
    let sv = linalg::singular_values_desc(t);
    let s_max = sv.first().copied().unwrap_or(0.0);
    let s_min = if t.nrows() < t.ncols() {
        0.0
    } else {
        sv.last().copied().unwrap_or(0.0)
    };
    (sv, s_max, s_min)
}

/// `|pinv(T_hat)|`: reciprocal of the smallest singular value, infinite when rank deficient.
pub fn inverse_norm(t: &DMatrix<f64>) -> f64 {
    let (_, s_max, s_min) = spectrum(t);
    if s_max == 0.0 || s_min <= RANK_TOL * s_max {
        f64::INFINITY
    } else {
        1.0 / s_min
    }
}

pub fn e1_direct(mom: &MomentEstimates) -> Result<CategoricalWeightEstimate> {
    let (d, k) = (mom.output_dim(), mom.num_classes());
    if d < k {
        return Err(invalid(
            "g",
            format!("output dimension {d} is below the class count {k}"),
        ));
    }
    let (sv, s_max, s_min) = spectrum(&mom.t_hat);
    if s_max == 0.0 || s_min <= RANK_TOL * s_max || s_min <= 1e-12 {
        return Err(Error::SingularOperator { spectrum: sv });
    }
    let theta = linalg::pseudo_inverse(&mom.t_hat, RANK_TOL) * mom.shift();
    Ok(CategoricalWeightEstimate::new(
        theta,
        CategoricalMethod::E1,
        CategoricalDiagnostics {
            smallest_singular_value: s_min,
            inverse_norm: 1.0 / s_min,
            exceeds_theta_cap: false,
            iterations: 0,
            objective_trace: Vec::new(),
        },
    ))
}

/// `|T theta - b| + delta |theta|`.
pub fn e2_objective(t: &DMatrix<f64>, b: &DVector<f64>, delta: f64, theta: &DVector<f64>) -> f64 {
    (t * theta - b).norm() + delta * theta.norm()
}

pub const E2_MAX_ITER: usize = 100_000;
pub const E2_TOL: f64 = 1e-10;
const E2_SMOOTHING_FLOOR: f64 = 1e-12;

pub fn e2_regularized(
    mom: &MomentEstimates,
    delta_t: f64,
    theta_cap: f64,
) -> Result<CategoricalWeightEstimate> {
    if !(delta_t >= 0.0 && delta_t.is_finite()) {
        return Err(invalid(
            "delta_t",
            format!("{delta_t} must be finite and nonnegative"),
        ));
    }
    if !(theta_cap > 0.0) {
        return Err(invalid(
            "theta_cap",
            format!("{theta_cap} must be positive"),
        ));
    }
    let t = &mom.t_hat;
    let b = mom.shift();
    let solution = solve_e2(t, &b, delta_t)?;
    let (_, _, s_min) = spectrum(t);
    let norm = solution.theta.norm();
    let exceeds = norm > theta_cap;
    if exceeds {
        info!("E2 estimate norm {norm:.4} exceeds theta cap {theta_cap:.4}");
    }
    Ok(CategoricalWeightEstimate::new(
        solution.theta,
        CategoricalMethod::E2,
        CategoricalDiagnostics {
            smallest_singular_value: s_min,
            inverse_norm: inverse_norm(t),
            exceeds_theta_cap: exceeds,
            iterations: solution.iterations,
            objective_trace: solution.trace,
        },
    ))
}

struct E2Solution {
    theta: DVector<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

/// Accelerated proximal gradient with smoothing continuation.
///
/// Each stage minimizes `sqrt(|T theta - b|^2 + mu^2) - mu + delta |theta|`, whose minimizer is
/// within `mu` of the unsmoothed optimum in objective value. The smooth part uses a
/// backtracking step, the regularizer its block soft-threshold, and `mu` shrinks by 10 per
/// stage down to `1e-12 max(1, |b|)`. The returned point is the best unsmoothed objective seen.
fn solve_e2(t: &DMatrix<f64>, b: &DVector<f64>, delta: f64) -> Result<E2Solution> {
    let k = t.ncols();
    let t_norm_sq = linalg::spectral_norm(t).powi(2);
    let mut theta = DVector::<f64>::zeros(k);
    let mut best = theta.clone();
    let mut best_f = e2_objective(t, b, delta, &best);
    let mut trace = vec![best_f];
    if t_norm_sq == 0.0 {
        return Ok(E2Solution {
            theta: best,
            iterations: 0,
            trace,
        });
    }
    let scale = b.norm().max(1.0);
    let mu_final = E2_SMOOTHING_FLOOR * scale;
    let mut mu = scale;
    let mut iterations = 0usize;
    let mut last_change = f64::INFINITY;

    let smooth = |theta: &DVector<f64>, mu: f64| -> (f64, DVector<f64>) {
        let r = t * theta - b;
        let s = (r.norm_squared() + mu * mu).sqrt();
        (s - mu, t.transpose() * r / s)
    };
    let prox = |v: &DVector<f64>, step: f64| -> DVector<f64> {
        let n = v.norm();
        let thresh = step * delta;
        if n <= thresh {
            DVector::zeros(v.len())
        } else {
            v * (1.0 - thresh / n)
        }
    };

    loop {
        let mut lip = t_norm_sq / mu;
        let mut y = theta.clone();
        let mut momentum = 1.0_f64;
        let (fs, _) = smooth(&theta, mu);
        let mut f_stage = fs + delta * theta.norm();
        let mut stage_done = false;
        while !stage_done {
            if iterations >= E2_MAX_ITER {
                return Err(Error::NotConverged {
                    iterations,
                    gap: last_change,
                });
            }
            iterations += 1;
            let (fy, gy) = smooth(&y, mu);
            let y_prev = y.clone();
            // backtracking from a relaxed estimate of the local curvature
            lip = (lip * 0.5).max(1e-300);
            let candidate = loop {
                let step = 1.0 / lip;
                let x = prox(&(&y - &gy * step), step);
                let diff = &x - &y;
                let (fx, _) = smooth(&x, mu);
                if fx <= fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-15 * fy.abs() {
                    break x;
                }
                lip *= 2.0;
            };
            let (fc, _) = smooth(&candidate, mu);
            let f_cand = fc + delta * candidate.norm();
            // monotone variant: keep the better of candidate and current iterate
            let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let accepted = f_cand <= f_stage;
            let cand_change = (f_cand - f_stage).abs();
            let x_new = if accepted {
                candidate.clone()
            } else {
                theta.clone()
            };
            y = &x_new
                + (&candidate - &x_new) * (momentum / next_m)
                + (&x_new - &theta) * ((momentum - 1.0) / next_m);
            if !accepted {
                // function-value restart
                y = x_new.clone();
                momentum = 1.0;
            } else {
                momentum = next_m;
            }
            let step_len = (&candidate - &y_prev).norm();
            // a plain step from the incumbent that fails to decrease means no further progress
            let stalled = !accepted && y_prev == theta;
            theta = x_new;
            let f_new = if accepted { f_cand } else { f_stage };
            last_change = (f_stage - f_new).abs();
            f_stage = f_new;

            let f_true = e2_objective(t, b, delta, &theta);
            if f_true < best_f {
                best_f = f_true;
                best = theta.clone();
            }
            trace.push(best_f);

            let size = theta.norm().max(1e-3 * scale);
            stage_done = stalled
                || step_len <= 1e-13 * size
                || (accepted
                    && cand_change < E2_TOL * f_stage.abs().max(1e-3)
                    && step_len <= 1e-7 * size);
        }
        debug!("E2 stage mu={mu:e} finished at iteration {iterations}, F={best_f:e}");
        if mu <= mu_final {
            break;
        }
        mu = (mu * 0.1).max(mu_final);
    }
    Ok(E2Solution {
        theta: best,
        iterations,
        trace,
    })
}

/// Sample size the direct estimator needs before its bound applies:
/// `(32 / alpha) |T^dagger|^2 d ln(6 (d + k) / delta)`.
pub fn burn_in_requirement_categorical(
    inverse_norm: f64,
    d: usize,
    k: usize,
    alpha: f64,
    delta: f64,
) -> f64 {
    32.0 / alpha * inverse_norm * inverse_norm * d as f64 * (6.0 * (d + k) as f64 / delta).ln()
}

/// Burn-in check with an explicit inverse-norm value.
pub fn burn_in_ok_categorical(
    inverse_norm: f64,
    d: usize,
    k: usize,
    alpha: f64,
    n: usize,
    delta: f64,
) -> Result<bool> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} is outside (0, 1)")));
    }
    if !inverse_norm.is_finite() {
        return Ok(false);
    }
    Ok(n as f64 >= burn_in_requirement_categorical(inverse_norm, d, k, alpha, delta))
}

/// Burn-in check using the empirical `|pinv(T_hat)|` in place of the population norm.
pub fn check_burn_in_categorical(
    mom: &MomentEstimates,
    alpha: f64,
    n: usize,
    delta: f64,
) -> Result<bool> {
    let proxy = inverse_norm(&mom.t_hat);
    info!("burn-in check uses empirical |pinv(T_hat)| = {proxy:.4} as the population proxy");
    burn_in_ok_categorical(proxy, mom.output_dim(), mom.num_classes(), alpha, n, delta)
}
