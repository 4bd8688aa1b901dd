//! Empirical moments of the statistic functions on the estimation split and the target.

use nalgebra::{DMatrix, DVector};

use crate::datagen::Sample;
use crate::error::{invalid, Error, Result};
use crate::linalg::gaussian;
use crate::predictors::StatisticFn;

/// `(T_hat, p_hat, q_hat)` for the categorical path.
///
/// `T_hat = mean g(x_i) e_{y_i}^T` over the estimation split, `p_hat = mean g(x_i)` over the
/// same split and `q_hat = mean g(x'_l)` over the target covariates. Population moments built
/// by [`population_moments`] carry `n_est = m = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub t_hat: DMatrix<f64>,
    pub p_hat: DVector<f64>,
    pub q_hat: DVector<f64>,
    pub n_est: usize,
    pub m: usize,
}

impl MomentEstimates {
    pub fn output_dim(&self) -> usize {
        self.t_hat.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.t_hat.ncols()
    }

    /// `q_hat - p_hat`.
    pub fn shift(&self) -> DVector<f64> {
        &self.q_hat - &self.p_hat
    }
}

pub fn estimate_categorical_moments(
    est_split: &[Sample<usize>],
    target: &[Vec<f64>],
    g: &StatisticFn,
    num_classes: usize,
) -> Result<MomentEstimates> {
    estimate_categorical_moments_with(est_split, target, g.output_dim, num_classes, |x| g.eval(x))
}

/// Same as [`estimate_categorical_moments`] for an arbitrary statistic `g: X -> R^d`.
pub fn estimate_categorical_moments_with<G>(
    est_split: &[Sample<usize>],
    target: &[Vec<f64>],
    d: usize,
    num_classes: usize,
    g: G,
) -> Result<MomentEstimates>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if est_split.is_empty() {
        return Err(Error::EmptyInput("estimation split"));
    }
    if target.is_empty() {
        return Err(Error::EmptyInput("target covariates"));
    }
    let mut t_hat = DMatrix::zeros(d, num_classes);
    let mut p_hat = DVector::zeros(d);
    for s in est_split {
        if s.y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: s.y,
                num_classes,
            });
        }
        let out = g(&s.x);
        if out.len() != d {
            return Err(invalid(
                "g",
                format!("output has {} entries, expected {d}", out.len()),
            ));
        }
        for (i, v) in out.iter().enumerate() {
            t_hat[(i, s.y)] += v;
            p_hat[i] += v;
        }
    }
    let mut q_hat = DVector::zeros(d);
    for x in target {
        let out = g(x);
        if out.len() != d {
            return Err(invalid(
                "g",
                format!("output has {} entries, expected {d}", out.len()),
            ));
        }
        for (i, v) in out.iter().enumerate() {
            q_hat[i] += v;
        }
    }
    let n_est = est_split.len();
    let m = target.len();
    t_hat /= n_est as f64;
    p_hat /= n_est as f64;
    q_hat /= m as f64;
    Ok(MomentEstimates {
        t_hat,
        p_hat,
        q_hat,
        n_est,
        m,
    })
}

/// Population moments from class-conditional means `E[g(X) | Y = j]` (columns of
/// `conditional_means`) and the two label marginals.
pub fn population_moments(
    conditional_means: &DMatrix<f64>,
    source_probs: &[f64],
    target_probs: &[f64],
) -> Result<MomentEstimates> {
    let k = conditional_means.ncols();
    if source_probs.len() != k || target_probs.len() != k {
        return Err(invalid("label marginals", format!("expected {k} entries")));
    }
    let p = DVector::from_column_slice(source_probs);
    let q = DVector::from_column_slice(target_probs);
    Ok(MomentEstimates {
        t_hat: conditional_means * DMatrix::from_diagonal(&p),
        p_hat: conditional_means * &p,
        q_hat: conditional_means * &q,
        n_est: 0,
        m: 0,
    })
}

/// Kernel-embedding moments for the functional path, in span coordinates.
///
/// With anchors `y_i` (source labels of the estimation split), source images `u(x_i)` and
/// target images `u(x'_l)`:
/// `T_hat theta = (1/N) sum_i kappa_{u(x_i)} theta(y_i)`, `p_hat = (1/N) sum_i kappa_{u(x_i)}`,
/// `q_hat = (1/m) sum_l kappa_{u(x'_l)}`.
///
/// The Gram blocks are available through [`KernelMoments::k_yy`] and friends; the estimators
/// only need their row means, which are computed once here.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    pub anchors: Vec<f64>,
    pub source_images: Vec<f64>,
    pub target_images: Vec<f64>,
    pub bandwidth: f64,
    pub kappa_bar: f64,
    /// `(1/m) G_ut 1_m`.
    pub cross_row_means: DVector<f64>,
    /// `(1/N) G_uu 1_N`.
    pub source_row_means: DVector<f64>,
    /// `(1/m^2) 1^T G_tt 1`.
    pub target_mean: f64,
}

impl KernelMoments {
    pub fn from_images(
        anchors: Vec<f64>,
        source_images: Vec<f64>,
        target_images: Vec<f64>,
        bandwidth: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid("bandwidth", format!("{bandwidth} is not positive")));
        }
        if anchors.is_empty() {
            return Err(Error::EmptyInput("estimation split"));
        }
        if target_images.is_empty() {
            return Err(Error::EmptyInput("target covariates"));
        }
        if anchors.len() != source_images.len() {
            return Err(invalid("source_images", "one image per anchor required"));
        }
        let n = anchors.len();
        let m = target_images.len();
        let cross_row_means = DVector::from_iterator(
            n,
            source_images.iter().map(|&a| {
                target_images
                    .iter()
                    .map(|&b| gaussian(a, b, bandwidth))
                    .sum::<f64>()
                    / m as f64
            }),
        );
        let source_row_means = DVector::from_iterator(
            n,
            source_images.iter().map(|&a| {
                source_images
                    .iter()
                    .map(|&b| gaussian(a, b, bandwidth))
                    .sum::<f64>()
                    / n as f64
            }),
        );
        let mut target_sum = 0.0;
        for (l, &a) in target_images.iter().enumerate() {
            let mut row = 0.0;
            for &b in &target_images[l + 1..] {
                row += gaussian(a, b, bandwidth);
            }
            target_sum += 2.0 * row + 1.0;
        }
        Ok(Self {
            anchors,
            source_images,
            target_images,
            bandwidth,
            kappa_bar: 1.0,
            cross_row_means,
            source_row_means,
            target_mean: target_sum / (m * m) as f64,
        })
    }

    pub fn n_est(&self) -> usize {
        self.anchors.len()
    }

    pub fn m(&self) -> usize {
        self.target_images.len()
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        gaussian(a, b, self.bandwidth)
    }

    fn gram(&self, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.kernel(rows[i], cols[j]))
    }

    /// `kappa(y_i, y_j)` over anchors.
    pub fn k_yy(&self) -> DMatrix<f64> {
        self.gram(&self.anchors, &self.anchors)
    }

    /// `kappa(u(x_i), u(x_j))` over source images.
    pub fn g_uu(&self) -> DMatrix<f64> {
        self.gram(&self.source_images, &self.source_images)
    }

    /// `kappa(u(x_i), u(x'_l))`, source by target.
    pub fn g_ut(&self) -> DMatrix<f64> {
        self.gram(&self.source_images, &self.target_images)
    }

    /// `kappa(u(x'_l), u(x'_k))` over target images.
    pub fn g_tt(&self) -> DMatrix<f64> {
        self.gram(&self.target_images, &self.target_images)
    }
}

pub fn estimate_kernel_moments(
    est_split: &[Sample<f64>],
    target: &[Vec<f64>],
    u: &StatisticFn,
    bandwidth: f64,
) -> Result<KernelMoments> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(invalid("bandwidth", format!("{bandwidth} is not positive")));
    }
    let anchors = est_split.iter().map(|s| s.y).collect();
    let source_images = est_split.iter().map(|s| u.eval_scalar(&s.x)).collect();
    let target_images = target.iter().map(|x| u.eval_scalar(x)).collect();
    KernelMoments::from_images(anchors, source_images, target_images, bandwidth)
}
