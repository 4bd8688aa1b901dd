//! Weight estimation for real-valued labels through kernel mean embeddings.
//!
//! The shift `theta = omega - 1` is sought in the Gaussian RKHS over labels, restricted to the
//! span of the anchor kernels `kappa(y_i, .)`. Both estimators work in an orthonormal basis of
//! that span obtained from a pivoted Cholesky factor `K_yy ≈ F F^T`: with coordinates `z`,
//! `theta(y_i) = (F z)_i` and `|theta|_H = |z|`. The squared residual
//! `|T_hat theta - q_hat + p_hat|_H^2` is then the quadratic `z^T M z - 2 z^T r + c` with
//! `M = F^T G_uu F / N^2` and `r = F^T h / N`, `h = G_ut 1/m - G_uu 1/N`.
//!
//! [`e4_regularized`] adds `lambda |z|^2` and solves the normal equations;
//! [`e3_direct`] applies a spectrally truncated inverse of `M`.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, PivotedCholesky};
use crate::moments::KernelMoments;

/// Residual-diagonal tolerance of the pivoted factorizations.
pub const PIVOT_TOL: f64 = 1e-12;
/// Relative eigenvalue cutoff of the direct estimator.
pub const SPECTRAL_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionalMethod {
    E3,
    E4,
}

impl FunctionalMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionalMethod::E3 => "E3",
            FunctionalMethod::E4 => "E4",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalWeightEstimate {
    /// Representer coefficients, one per anchor; zero off the pivot set.
    pub beta: DVector<f64>,
    pub anchors: Vec<f64>,
    pub method: FunctionalMethod,
    pub lambda_used: f64,
    pub rkhs_norm: f64,
    pub bandwidth: f64,
    /// `1 / sqrt(smallest retained eigenvalue of M)`, the inverse-operator norm on the span.
    pub op_inv_norm_proxy: f64,
    /// Ratio of the largest to the smallest retained eigenvalue of `M`.
    pub condition_number: f64,
    pub basis_rank: usize,
    pub jitter: f64,
}

impl FunctionalWeightEstimate {
    /// `theta_hat(y) = sum_j beta_j kappa(y_j, y)`.
    pub fn theta(&self, y: f64) -> f64 {
        self.anchors
            .iter()
            .zip(self.beta.iter())
            .filter(|(_, b)| **b != 0.0)
            .map(|(&a, &b)| b * linalg::gaussian(a, y, self.bandwidth))
            .sum()
    }
}

/// `1 + gamma * theta_hat(y)` for each query label.
pub fn evaluate_weight(est: &FunctionalWeightEstimate, gamma: f64, ys: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("{gamma} is outside [0, 1]")));
    }
    if est.anchors.is_empty() {
        return Err(Error::EmptyInput("anchors"));
    }
    Ok(ys.iter().map(|&y| 1.0 + gamma * est.theta(y)).collect())
}

/// `|omega_hat - omega|_2 / |omega|_2` over `grid`, with `omega_hat = 1 + theta_hat`.
pub fn relative_grid_error(
    est: &FunctionalWeightEstimate,
    truth: impl Fn(f64) -> f64,
    grid: &[f64],
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &y in grid {
        let w = truth(y);
        let e = 1.0 + est.theta(y) - w;
        num += e * e;
        den += w * w;
    }
    (num / den).sqrt()
}

struct ReducedSystem {
    factor: PivotedCholesky,
    m: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn reduce(km: &KernelMoments) -> ReducedSystem {
    let n = km.n_est() as f64;
    let anchors = &km.anchors;
    let images = &km.source_images;
    let factor = PivotedCholesky::new(
        anchors.len(),
        |_| 1.0,
        |i, j| km.kernel(anchors[i], anchors[j]),
        PIVOT_TOL,
    );
    let g_factor = PivotedCholesky::new(
        images.len(),
        |_| 1.0,
        |i, j| km.kernel(images[i], images[j]),
        PIVOT_TOL,
    );
    debug!(
        "anchor basis rank {} of {}, image basis rank {}",
        factor.rank(),
        anchors.len(),
        g_factor.rank()
    );
    let b = factor.factor.transpose() * &g_factor.factor;
    let mut m = &b * b.transpose() / (n * n);
    m = (&m + m.transpose()) * 0.5;
    let h = &km.cross_row_means - &km.source_row_means;
    let rhs = factor.factor.transpose() * h / n;
    ReducedSystem { factor, m, rhs }
}

fn finish(
    km: &KernelMoments,
    sys: &ReducedSystem,
    z: &DVector<f64>,
    method: FunctionalMethod,
    lambda: f64,
    kept_min: f64,
    kept_max: f64,
    jitter: f64,
) -> FunctionalWeightEstimate {
    let l_ss = sys.factor.pivot_block();
    let beta_s = if z.is_empty() {
        z.clone()
    } else {
        linalg::solve_lower_transpose(&l_ss, z)
    };
    let mut beta = DVector::zeros(km.n_est());
    for (a, &p) in sys.factor.pivots.iter().enumerate() {
        beta[p] = beta_s[a];
    }
    let rkhs_norm = rkhs_norm(km, &beta);
    let (proxy, cond) = if kept_min > 0.0 {
        (1.0 / kept_min.sqrt(), kept_max / kept_min)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    FunctionalWeightEstimate {
        beta,
        anchors: km.anchors.clone(),
        method,
        lambda_used: lambda,
        rkhs_norm,
        bandwidth: km.bandwidth,
        op_inv_norm_proxy: proxy,
        condition_number: cond,
        basis_rank: sys.factor.rank(),
        jitter,
    }
}

/// `sqrt(beta^T K_yy beta)` over the nonzero coefficients.
pub fn rkhs_norm(km: &KernelMoments, beta: &DVector<f64>) -> f64 {
    let support: Vec<usize> = (0..beta.len()).filter(|&i| beta[i] != 0.0).collect();
    let mut q = 0.0;
    for &i in &support {
        let mut row = 0.0;
        for &j in &support {
            row += km.kernel(km.anchors[i], km.anchors[j]) * beta[j];
        }
        q += beta[i] * row;
    }
    q.max(0.0).sqrt()
}

fn kept_spectrum(m: &DMatrix<f64>) -> (SymmetricEigen<f64, nalgebra::Dyn>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    (eig, top)
}

/// Regularized estimator: minimizes `|T_hat theta - q_hat + p_hat|_H^2 + lambda |theta|_H^2`.
pub fn e4_regularized(km: &KernelMoments, lambda: f64) -> Result<FunctionalWeightEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(
            "lambda",
            format!("{lambda} must be finite and nonnegative"),
        ));
    }
    let sys = reduce(km);
    let r = sys.rhs.len();
    let mut a = sys.m.clone();
    for i in 0..r {
        a[(i, i)] += lambda;
    }
    let (z, jitter) =
        linalg::solve_psd_with_jitter(&a, &sys.rhs, &linalg::jitter_ladder(a.trace()))?;
    if jitter > 0.0 {
        debug!("E4 system needed jitter {jitter:e}");
    }
    let (eig, top) = kept_spectrum(&sys.m);
    let kept_min = eig
        .eigenvalues
        .iter()
        .copied()
        .filter(|&v| v > SPECTRAL_CUTOFF * top)
        .fold(f64::INFINITY, f64::min);
    let kept_min = if kept_min.is_finite() { kept_min } else { 0.0 };
    Ok(finish(
        km,
        &sys,
        &z,
        FunctionalMethod::E4,
        lambda,
        kept_min,
        top,
        jitter,
    ))
}

/// Direct estimator: truncated pseudo-inverse of the normal-equations operator.
pub fn e3_direct(km: &KernelMoments) -> Result<FunctionalWeightEstimate> {
    let sys = reduce(km);
    let (eig, top) = kept_spectrum(&sys.m);
    let cutoff = SPECTRAL_CUTOFF * top;
    let mut z = DVector::zeros(sys.rhs.len());
    let mut kept_min = f64::INFINITY;
    let mut kept = 0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff && lam > 0.0 {
            let v = eig.eigenvectors.column(i);
            z += v * (v.dot(&sys.rhs) / lam);
            kept_min = kept_min.min(lam);
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::SingularOperator {
            spectrum: eig.eigenvalues.iter().copied().collect(),
        });
    }
    debug!("E3 kept {kept} of {} eigenvalues", eig.eigenvalues.len());
    Ok(finish(
        km,
        &sys,
        &z,
        FunctionalMethod::E3,
        0.0,
        kept_min,
        top,
        0.0,
    ))
}

/// `c = K_yy beta / N + 1/N`, the source-image coefficients of `T_hat theta + p_hat`.
fn image_coefficients(km: &KernelMoments, beta: &DVector<f64>) -> DVector<f64> {
    let n = km.n_est() as f64;
    (km.k_yy() * beta).map(|v| (v + 1.0) / n)
}

/// Squared residual `|T_hat theta - q_hat + p_hat|_H^2` from Gram blocks.
pub fn residual_norm_sq(km: &KernelMoments, beta: &DVector<f64>) -> f64 {
    let c = image_coefficients(km, beta);
    let g = km.g_uu();
    let m = km.m() as f64;
    let g_ut_1 = km.g_ut().column_sum() / m;
    (c.dot(&(&g * &c)) - 2.0 * c.dot(&g_ut_1) + km.target_mean).max(0.0)
}

/// `J(beta) = |T_hat theta - q_hat + p_hat|_H^2 + lambda beta^T K_yy beta`.
pub fn objective(km: &KernelMoments, lambda: f64, beta: &DVector<f64>) -> f64 {
    let k = km.k_yy();
    residual_norm_sq(km, beta) + lambda * beta.dot(&(&k * beta))
}

/// Gradient of [`objective`] in `beta`.
pub fn objective_gradient(km: &KernelMoments, lambda: f64, beta: &DVector<f64>) -> DVector<f64> {
    let n = km.n_est() as f64;
    let m = km.m() as f64;
    let k = km.k_yy();
    let c = image_coefficients(km, beta);
    let g_ut_1 = km.g_ut().column_sum() / m;
    let inner = km.g_uu() * &c - g_ut_1;
    (&k * inner) * (2.0 / n) + (&k * beta) * (2.0 * lambda)
}

pub fn burn_in_requirement_functional(
    alpha: f64,
    delta: f64,
    kappa_bar: f64,
    op_inv_norm_proxy: f64,
) -> f64 {
    32.0 / alpha * op_inv_norm_proxy.powi(2) * kappa_bar.powi(2) * (6.0 / delta).ln()
}

/// True when `n` reaches the sample size at which the direct estimator's guarantee applies.
pub fn check_burn_in_functional(
    n: usize,
    alpha: f64,
    delta: f64,
    kappa_bar: f64,
    op_inv_norm_proxy: f64,
) -> Result<bool> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} is outside (0, 1)")));
    }
    if !op_inv_norm_proxy.is_finite() {
        return Ok(false);
    }
    Ok(n as f64 >= burn_in_requirement_functional(alpha, delta, kappa_bar, op_inv_norm_proxy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n: usize, m: usize, bw: f64) -> KernelMoments {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let images = anchors
            .iter()
            .map(|y| y + 0.1 * (rng.random::<f64>() - 0.5))
            .collect();
        let targets = (0..m).map(|_| rng.random::<f64>().sqrt()).collect();
        KernelMoments::from_images(anchors, images, targets, bw).unwrap()
    }

    #[test]
    fn equal_embeddings_give_zero() {
        let ys = vec![0.1, 0.4, 0.7, 0.9];
        let km = KernelMoments::from_images(ys.clone(), ys.clone(), ys.clone(), 0.5).unwrap();
        let est = e4_regularized(&km, 0.1).unwrap();
        assert!(est.beta.amax() < 1e-12);
        let e3 = e3_direct(&km).unwrap();
        assert!(e3.beta.amax() < 1e-6);
        assert!(evaluate_weight(&est, 1.0, &[0.3]).unwrap()[0] - 1.0 < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let km = instance(1, 10, 10, 0.5);
        let lambda = 0.01;
        let est = e4_regularized(&km, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let random = DVector::from_fn(10, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let scale = objective_gradient(&km, lambda, &DVector::zeros(10)).norm();
        for beta in [est.beta.clone(), random] {
            let g = objective_gradient(&km, lambda, &beta);
            let h = 1e-6;
            let fd = DVector::from_fn(10, |i, _| {
                let mut plus = beta.clone();
                let mut minus = beta.clone();
                plus[i] += h;
                minus[i] -= h;
                (objective(&km, lambda, &plus) - objective(&km, lambda, &minus)) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / fd.norm().max(scale);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn beats_random_search() {
        let km = instance(3, 6, 6, 0.3);
        let lambda = 1e-3;
        let est = e4_regularized(&km, lambda).unwrap();
        let f_est = objective(&km, lambda, &est.beta);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100_000 {
            let cand = DVector::from_fn(6, |_, _| rng.random::<f64>() * 10.0 - 5.0);
            let f = objective(&km, lambda, &cand);
            assert!(f_est <= f + 1e-12, "{f_est} > {f}");
        }
    }

    #[test]
    fn residual_matches_feature_quadrature() {
        // kappa(a, b) = int phi_a(s) phi_b(s) ds with phi_a(s) = c exp(-(a - s)^2 / bw^2)
        let bw = 0.4;
        let km = instance(5, 7, 5, bw);
        let beta = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.0, 1.1, -0.7, 0.25]);
        let c = (2.0 / (std::f64::consts::PI * bw * bw)).powf(0.25);
        let phi = |a: f64, s: f64| c * (-(a - s) * (a - s) / (bw * bw)).exp();
        let n = km.n_est() as f64;
        let m = km.m() as f64;
        let theta_at: Vec<f64> = km
            .anchors
            .iter()
            .map(|&y| {
                km.anchors
                    .iter()
                    .zip(beta.iter())
                    .map(|(&a, b)| b * km.kernel(a, y))
                    .sum()
            })
            .collect();
        let (lo, hi, steps) = (-4.0, 5.0, 90_000);
        let ds = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            let s = lo + (i as f64 + 0.5) * ds;
            let mut r = 0.0;
            for (u, th) in km.source_images.iter().zip(&theta_at) {
                r += (th + 1.0) / n * phi(*u, s);
            }
            for t in &km.target_images {
                r -= phi(*t, s) / m;
            }
            total += r * r * ds;
        }
        assert!((total - residual_norm_sq(&km, &beta)).abs() < 1e-3);
    }

    #[test]
    fn norm_shrinks_with_lambda() {
        let km = instance(6, 40, 40, 0.3);
        let norms: Vec<f64> = [1e-4, 1e-2, 1.0, 100.0]
            .iter()
            .map(|&l| e4_regularized(&km, l).unwrap().rkhs_norm)
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]), "{norms:?}");
    }

    #[test]
    fn direct_matches_vanishing_regularizer() {
        let anchors: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let images = anchors.iter().map(|y| y * 0.9 + 0.05).collect();
        let targets = (0..8).map(|i| (i as f64 / 7.0).sqrt()).collect();
        let km = KernelMoments::from_images(anchors, images, targets, 0.1).unwrap();
        let e3 = e3_direct(&km).unwrap();
        assert!(e3.condition_number < 1e6);
        let e4 = e4_regularized(&km, 1e-15).unwrap();
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let sup = grid
            .iter()
            .map(|&y| (e3.theta(y) - e4.theta(y)).abs())
            .fold(0.0, f64::max);
        let scale = grid.iter().map(|&y| e3.theta(y).abs()).fold(1.0, f64::max);
        assert!(sup <= 1e-6 * scale, "sup {sup} scale {scale}");
    }

    #[test]
    fn rkhs_norm_is_reproducible() {
        let km = instance(8, 20, 15, 0.3);
        let est = e4_regularized(&km, 0.01).unwrap();
        assert_eq!(rkhs_norm(&km, &est.beta).to_bits(), est.rkhs_norm.to_bits());
        assert!(est.rkhs_norm.is_finite() && est.rkhs_norm >= 0.0);
    }

    #[test]
    fn evaluate_weight_cases() {
        let est = FunctionalWeightEstimate {
            beta: DVector::from_vec(vec![2.0]),
            anchors: vec![0.4],
            method: FunctionalMethod::E4,
            lambda_used: 0.0,
            rkhs_norm: 2.0,
            bandwidth: 0.9,
            op_inv_norm_proxy: 1.0,
            condition_number: 1.0,
            basis_rank: 1,
            jitter: 0.0,
        };
        assert_eq!(evaluate_weight(&est, 0.5, &[0.4]).unwrap(), vec![2.0]);
        assert!(evaluate_weight(&est, 0.0, &[0.1, 0.9])
            .unwrap()
            .iter()
            .all(|&w| w == 1.0));
        let zero = FunctionalWeightEstimate {
            beta: DVector::zeros(1),
            ..est.clone()
        };
        assert!(evaluate_weight(&zero, 1.0, &[0.1, 0.9])
            .unwrap()
            .iter()
            .all(|&w| w == 1.0));
        assert!(evaluate_weight(&est, 1.5, &[0.1]).is_err());
    }

    #[test]
    fn burn_in_examples() {
        // 256 ln 60 = 1048.1
        assert!(check_burn_in_functional(1100, 0.5, 0.1, 1.0, 2.0).unwrap());
        assert!(!check_burn_in_functional(1000, 0.5, 0.1, 1.0, 2.0).unwrap());
        assert!(check_burn_in_functional(1, 0.5, 0.1, 1.0, 0.0).unwrap());
        assert!(!check_burn_in_functional(usize::MAX, 0.5, 0.1, 1.0, f64::INFINITY).unwrap());
        assert!(check_burn_in_functional(10, 0.5, 0.0, 1.0, 1.0).is_err());
    }
}
