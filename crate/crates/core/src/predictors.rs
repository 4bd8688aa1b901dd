//! Statistic functions `g` (categorical) and `u` (regression) feeding the moment estimators.

use nalgebra::{DMatrix, DVector};

use crate::datagen::Sample;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, PivotedCholesky};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatisticMode {
    /// Softmax outputs on the probability simplex.
    Simplex,
    /// Least-squares one-hot regression clipped to `[-1, 1]^k`.
    HyperCube,
    /// Gaussian kernel ridge regression of the label on the covariate.
    KernelRegressor,
}

impl StatisticMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StatisticMode::Simplex => "simplex",
            StatisticMode::HyperCube => "hypercube",
            StatisticMode::KernelRegressor => "kernel_regressor",
        }
    }
}

impl std::str::FromStr for StatisticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simplex" => Ok(StatisticMode::Simplex),
            "hypercube" | "hyper_cube" => Ok(StatisticMode::HyperCube),
            "kernel_regressor" | "kernel" => Ok(StatisticMode::KernelRegressor),
            other => Err(invalid("statistic_mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Multinomial logistic model; `weights` is `k x (p + 1)` with the bias in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    pub weights: DMatrix<f64>,
}

impl SoftmaxModel {
    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let p = self.weights.ncols() - 1;
        (0..self.weights.nrows())
            .map(|c| {
                let row = self.weights.row(c);
                row[p] + x.iter().enumerate().map(|(j, v)| row[j] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

/// Affine least-squares map; `weights` is `d x (p + 1)` with the bias in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: DMatrix<f64>,
}

impl LinearModel {
    pub fn raw(&self, x: &[f64]) -> Vec<f64> {
        let p = self.weights.ncols() - 1;
        (0..self.weights.nrows())
            .map(|c| {
                let row = self.weights.row(c);
                row[p] + x.iter().enumerate().map(|(j, v)| row[j] * v).sum::<f64>()
            })
            .collect()
    }
}

/// Gaussian kernel ridge regressor `u(x) = mean + sum_j coef_j kappa(x, center_j)`.
///
/// The centers are the pivots of a pivoted Cholesky factorization of the training Gram
/// matrix; the dropped part of the Gram matrix is below `1e-10 * ridge` on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRidgeModel {
    pub centers: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub mean: f64,
    pub bandwidth: f64,
    pub ridge: f64,
}

impl KernelRidgeModel {
    pub const DEFAULT_BANDWIDTH: f64 = 0.9;
    pub const DEFAULT_RIDGE: f64 = 1e-2;

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.mean
            + self
                .centers
                .iter()
                .zip(&self.coef)
                .map(|(c, a)| a * linalg::gaussian_vec(x, c, self.bandwidth))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatisticModel {
    Softmax(SoftmaxModel),
    Linear(LinearModel),
    KernelRidge(KernelRidgeModel),
}

/// A trained statistic function with its output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticFn {
    pub mode: StatisticMode,
    pub output_dim: usize,
    pub model: StatisticModel,
}

impl StatisticFn {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.model {
            StatisticModel::Softmax(m) => m.probabilities(x),
            StatisticModel::Linear(m) => m.raw(x).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            StatisticModel::KernelRidge(m) => vec![m.predict(x)],
        }
    }

    /// Scalar output of a one-dimensional statistic.
    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        match &self.model {
            StatisticModel::KernelRidge(m) => m.predict(x),
            _ => self.eval(x)[0],
        }
    }
}

fn check_classes(train: &[Sample<usize>], k: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    let mut seen = vec![false; k];
    for s in train {
        if s.y >= k {
            return Err(Error::LabelOutOfRange {
                label: s.y,
                num_classes: k,
            });
        }
        seen[s.y] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(c) => Err(Error::MissingClass(c)),
        None => Ok(()),
    }
}

pub fn train_simplex(train: &[Sample<usize>], k: usize) -> Result<StatisticFn> {
    check_classes(train, k)?;
    let weights = vec![1.0; train.len()];
    let model = fit_softmax(train, &weights, k, SOFTMAX_L2)?;
    Ok(StatisticFn {
        mode: StatisticMode::Simplex,
        output_dim: k,
        model: StatisticModel::Softmax(model),
    })
}

pub fn train_hypercube(train: &[Sample<usize>], k: usize) -> Result<StatisticFn> {
    check_classes(train, k)?;
    let p = train[0].x.len();
    let design = design_matrix(train.iter().map(|s| s.x.as_slice()), train.len(), p);
    let targets = DMatrix::from_fn(
        train.len(),
        k,
        |i, c| if train[i].y == c { 1.0 } else { 0.0 },
    );
    let mut gram = design.transpose() * &design;
    let jitter = 1e-10 * gram.trace() / gram.nrows() as f64;
    for i in 0..gram.nrows() {
        gram[(i, i)] += jitter;
    }
    let rhs = design.transpose() * targets;
    let chol = gram.cholesky().ok_or(Error::IllConditioned { jitter })?;
    let coef = chol.solve(&rhs);
    Ok(StatisticFn {
        mode: StatisticMode::HyperCube,
        output_dim: k,
        model: StatisticModel::Linear(LinearModel {
            weights: coef.transpose(),
        }),
    })
}

pub fn train_kernel_regressor(
    train: &[Sample<f64>],
    bandwidth: f64,
    ridge: f64,
) -> Result<StatisticFn> {
    let weights = vec![1.0; train.len()];
    let model = fit_kernel_ridge(train, &weights, bandwidth, ridge)?;
    Ok(StatisticFn {
        mode: StatisticMode::KernelRegressor,
        output_dim: 1,
        model: StatisticModel::KernelRidge(model),
    })
}

pub(crate) const SOFTMAX_L2: f64 = 1e-4;
const SOFTMAX_MAX_ITER: usize = 20_000;
const SOFTMAX_GRAD_TOL: f64 = 1e-7;

fn design_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize, p: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, p + 1);
    for (i, x) in rows.enumerate() {
        for j in 0..p {
            d[(i, j)] = x[j];
        }
        d[(i, p)] = 1.0;
    }
    d
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Weighted multinomial logistic regression by accelerated gradient descent.
///
/// Minimizes `sum_i w_i CE_i / sum_i w_i + l2/2 |W|^2` (bias unpenalized) with a constant
/// step `1/L`, Nesterov momentum and function-value restarts.
pub(crate) fn fit_softmax(
    train: &[Sample<usize>],
    sample_weights: &[f64],
    k: usize,
    l2: f64,
) -> Result<SoftmaxModel> {
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptyInput("training samples"));
    }
    let total: f64 = sample_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let p = train[0].x.len();
    let design = design_matrix(train.iter().map(|s| s.x.as_slice()), n, p);
    let w: Vec<f64> = sample_weights.iter().map(|v| v / total).collect();

    // Hessian of the weighted cross-entropy is bounded by (1/2) X^T diag(w) X.
    let mut xtwx = DMatrix::<f64>::zeros(p + 1, p + 1);
    for i in 0..n {
        let row = design.row(i);
        xtwx += w[i] * row.transpose() * row;
    }
    let lip = 0.5 * linalg::spectral_norm(&xtwx) + l2;
    let step = 1.0 / lip;

    let objective_and_grad = |theta: &DMatrix<f64>, want_grad: bool| -> (f64, DMatrix<f64>) {
        let logits = &design * theta.transpose(); // n x k
        let mut loss = 0.0;
        let mut resid = DMatrix::<f64>::zeros(n, k);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let z: Vec<f64> = logits.row(i).iter().copied().collect();
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += w[i] * (lse - z[train[i].y]);
            if want_grad {
                for c in 0..k {
                    let prob = (z[c] - lse).exp();
                    let target = if train[i].y == c { 1.0 } else { 0.0 };
                    resid[(i, c)] = w[i] * (prob - target);
                }
            }
        }
        let mut pen = 0.0;
        for c in 0..k {
            for j in 0..p {
                pen += theta[(c, j)] * theta[(c, j)];
            }
        }
        loss += 0.5 * l2 * pen;
        let mut grad = DMatrix::zeros(k, p + 1);
        if want_grad {
            grad = resid.transpose() * &design;
            for c in 0..k {
                for j in 0..p {
                    grad[(c, j)] += l2 * theta[(c, j)];
                }
            }
        }
        (loss, grad)
    };

    let mut theta = DMatrix::<f64>::zeros(k, p + 1);
    let mut prev = theta.clone();
    let mut momentum = 1.0_f64;
    let mut f_prev = objective_and_grad(&theta, false).0;
    for _ in 0..SOFTMAX_MAX_ITER {
        let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let look = &theta + (&theta - &prev) * ((momentum - 1.0) / next_m);
        let (_, grad) = objective_and_grad(&look, true);
        let candidate = &look - grad * step;
        let (f_cand, grad_cand) = objective_and_grad(&candidate, true);
        if f_cand > f_prev {
            // restart momentum from the current iterate
            prev = theta.clone();
            momentum = 1.0;
            continue;
        }
        prev = std::mem::replace(&mut theta, candidate);
        momentum = next_m;
        f_prev = f_cand;
        if grad_cand.norm() < SOFTMAX_GRAD_TOL {
            break;
        }
    }
    Ok(SoftmaxModel { weights: theta })
}

/// Weighted Gaussian kernel ridge regression on a pivoted Cholesky basis.
///
/// Minimizes `sum_i w_i (y_i - mean - f(x_i))^2 + ridge |f|^2` where `mean` is the weighted
/// label mean.
pub(crate) fn fit_kernel_ridge(
    train: &[Sample<f64>],
    sample_weights: &[f64],
    bandwidth: f64,
    ridge: f64,
) -> Result<KernelRidgeModel> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(invalid("bandwidth", format!("{bandwidth} is not positive")));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(invalid("ridge", format!("{ridge} is not positive")));
    }
    let total: f64 = sample_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let mean = train
        .iter()
        .zip(sample_weights)
        .map(|(s, w)| w * s.y)
        .sum::<f64>()
        / total;
    let tol = (1e-10 * ridge).max(1e-13);
    let pc = PivotedCholesky::new(
        train.len(),
        |_| 1.0,
        |i, j| linalg::gaussian_vec(&train[i].x, &train[j].x, bandwidth),
        tol,
    );
    let phi = &pc.factor;
    let r = pc.rank();
    let mut gram = DMatrix::<f64>::zeros(r, r);
    let mut rhs = DVector::<f64>::zeros(r);
    for (i, s) in train.iter().enumerate() {
        let wi = sample_weights[i];
        if wi == 0.0 {
            continue;
        }
        let row = phi.row(i);
        gram += wi * row.transpose() * row;
        rhs += row.transpose() * (wi * (s.y - mean));
    }
    for i in 0..r {
        gram[(i, i)] += ridge;
    }
    let feat_coef = gram
        .cholesky()
        .ok_or(Error::IllConditioned { jitter: ridge })?
        .solve(&rhs);
    // f(x) = phi(x)^T v with phi(x) = L_SS^{-1} k_S(x), so f(x) = k_S(x)^T L_SS^{-T} v.
    let coef = linalg::solve_lower_transpose(&pc.pivot_block(), &feat_coef);
    Ok(KernelRidgeModel {
        centers: pc.pivots.iter().map(|&i| train[i].x.clone()).collect(),
        coef: coef.iter().copied().collect(),
        mean,
        bandwidth,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        gen_categorical, gen_regression, CategoricalSynthConfig, RegressionSynthConfig,
    };
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn blobs(k: usize, n: usize, noise: f64, seed: u64) -> Vec<Sample<usize>> {
        let cfg = CategoricalSynthConfig::new(k, noise, seed).unwrap();
        gen_categorical(&cfg, n, 1).unwrap().source
    }

    fn accuracy(g: &StatisticFn, data: &[Sample<usize>]) -> f64 {
        data.iter().filter(|s| argmax(&g.eval(&s.x)) == s.y).count() as f64 / data.len() as f64
    }

    #[test]
    fn simplex_separates_easy_blobs() {
        let train = blobs(2, 400, 0.15, 1);
        let test = blobs(2, 400, 0.15, 2);
        let g = train_simplex(&train, 2).unwrap();
        assert!(accuracy(&g, &test) > 0.9);
        for s in &test {
            let out = g.eval(&s.x);
            assert!(out.iter().all(|v| *v >= 0.0));
            assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn simplex_single_point_per_class() {
        let train: Vec<Sample<usize>> = (0..3)
            .map(|c| {
                let mut x = vec![0.0; 3];
                x[c] = 1.0;
                Sample { x, y: c }
            })
            .collect();
        let g = train_simplex(&train, 3).unwrap();
        for s in &train {
            assert_eq!(argmax(&g.eval(&s.x)), s.y);
        }
    }

    #[test]
    fn simplex_on_random_labels_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut train = blobs(4, 2000, 0.5, 3);
        for s in &mut train {
            s.y = rng.random_range(0..4);
        }
        let g = train_simplex(&train, 4).unwrap();
        for s in train.iter().take(200) {
            assert!(g.eval(&s.x).iter().all(|v| (v - 0.25).abs() < 0.2));
        }
    }

    #[test]
    fn missing_class_is_named() {
        let train = vec![Sample { x: vec![0.0], y: 0 }, Sample { x: vec![1.0], y: 2 }];
        assert!(matches!(
            train_simplex(&train, 3),
            Err(Error::MissingClass(1))
        ));
        assert!(matches!(
            train_hypercube(&train, 3),
            Err(Error::MissingClass(1))
        ));
        assert!(matches!(
            train_hypercube(&train, 2),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn hypercube_hits_corners_on_separated_data() {
        let train = blobs(3, 300, 0.02, 5);
        let g = train_hypercube(&train, 3).unwrap();
        for s in &train {
            let out = g.eval(&s.x);
            for (c, v) in out.iter().enumerate() {
                let corner = if c == s.y { 1.0 } else { 0.0 };
                assert!((v - corner).abs() < 0.1);
                assert!((-1.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn hypercube_constant_features_give_frequencies() {
        let labels = [0, 1, 1, 2, 1, 0, 1, 1];
        let train: Vec<_> = labels
            .iter()
            .map(|&y| Sample {
                x: vec![2.0, 2.0],
                y,
            })
            .collect();
        let g = train_hypercube(&train, 3).unwrap();
        let out = g.eval(&[2.0, 2.0]);
        let expect = [2.0 / 8.0, 5.0 / 8.0, 1.0 / 8.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-6, "{out:?}");
        }
    }

    #[test]
    fn hypercube_symmetric_blobs_reflect() {
        // class c at e_c; reflecting x swaps coordinates, so class means mirror.
        let cfg = CategoricalSynthConfig::new(2, 0.5, 6)
            .unwrap()
            .with_label_masses(&[1.0, 1.0], &[1.0, 1.0])
            .unwrap();
        let train = gen_categorical(&cfg, 20_000, 1).unwrap().source;
        let g = train_hypercube(&train, 2).unwrap();
        let mut means = [[0.0; 2]; 2];
        let mut counts = [0.0; 2];
        for s in &train {
            let out = g.eval(&s.x);
            counts[s.y] += 1.0;
            for c in 0..2 {
                means[s.y][c] += out[c];
            }
        }
        for y in 0..2 {
            for c in 0..2 {
                means[y][c] /= counts[y];
            }
        }
        assert!((means[0][0] - means[1][1]).abs() < 0.05);
        assert!((means[0][1] - means[1][0]).abs() < 0.05);
    }

    #[test]
    fn kernel_regressor_interpolates() {
        let train: Vec<_> = (0..30)
            .map(|i| {
                let x = i as f64 / 29.0;
                Sample { x: vec![x], y: x }
            })
            .collect();
        let u = train_kernel_regressor(&train, 0.9, 1e-8).unwrap();
        for s in &train {
            assert!((u.eval_scalar(&s.x) - s.y).abs() < 1e-3);
        }
    }

    #[test]
    fn kernel_regressor_huge_ridge_predicts_mean() {
        let train: Vec<_> = (0..20)
            .map(|i| Sample {
                x: vec![i as f64 / 19.0],
                y: (i * i) as f64 / 400.0,
            })
            .collect();
        let mean = train.iter().map(|s| s.y).sum::<f64>() / 20.0;
        let u = train_kernel_regressor(&train, 0.9, 1e12).unwrap();
        for s in &train {
            assert!((u.eval_scalar(&s.x) - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn kernel_regressor_noisy_identity() {
        let cfg = RegressionSynthConfig::new(0.2, 0.5, 0.1, 11).unwrap();
        let ds = gen_regression(&cfg, 1000, 500).unwrap();
        let u = train_kernel_regressor(&ds.source, 0.9, 1e-2).unwrap();
        let labels = ds.target_oracle.as_ref().unwrap();
        let mse = ds
            .target_covariates
            .iter()
            .zip(labels)
            .map(|(x, y)| (u.eval_scalar(x) - y).powi(2))
            .sum::<f64>()
            / labels.len() as f64;
        assert!(mse.sqrt() <= 2.0 * cfg.noise_std, "rmse {}", mse.sqrt());
    }

    #[test]
    fn kernel_regressor_is_deterministic() {
        let cfg = RegressionSynthConfig::new(0.2, 0.5, 0.1, 12).unwrap();
        let ds = gen_regression(&cfg, 200, 1).unwrap();
        let a = train_kernel_regressor(&ds.source, 0.9, 1e-2).unwrap();
        let b = train_kernel_regressor(&ds.source, 0.9, 1e-2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_regressor_rejects_bad_hyperparameters() {
        let train = vec![Sample {
            x: vec![0.0],
            y: 0.0,
        }];
        assert!(train_kernel_regressor(&train, 0.0, 1.0).is_err());
        assert!(train_kernel_regressor(&train, 1.0, -1.0).is_err());
        assert!(train_kernel_regressor(&[], 1.0, 1.0).is_err());
    }
}
