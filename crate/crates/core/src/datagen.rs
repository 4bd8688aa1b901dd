//! Synthetic label-shift generators with analytic importance weights.
//!
//! Categorical: source label masses alternate `1/k, 3/k, 1/k, ...`, target masses swap the
//! pattern, both normalized. Class `c` sits at the basis vector `e_c` of `R^k` and covariates
//! add isotropic Gaussian noise.
//!
//! Regression: labels on `[0, 1]` with density `1 - a + 2 a y` (source) and `1 - b + 2 b y`
//! (target); the covariate is the label plus Gaussian noise.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{invalid, Error, Result};

const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A labeled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<L> {
    pub x: Vec<f64>,
    pub y: L,
}

/// Labeled source samples and unlabeled target covariates.
///
/// `target_oracle` keeps the generated target labels for evaluation only; estimators never
/// read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<L> {
    pub source: Vec<Sample<L>>,
    pub target_covariates: Vec<Vec<f64>>,
    pub target_oracle: Option<Vec<L>>,
    pub seed: u64,
}

impl<L: Clone> Dataset<L> {
    pub fn n(&self) -> usize {
        self.source.len()
    }

    pub fn m(&self) -> usize {
        self.target_covariates.len()
    }

    /// Drops the retained target labels.
    pub fn without_oracle(mut self) -> Self {
        self.target_oracle = None;
        self
    }

    /// Target samples paired with their oracle labels, if retained.
    pub fn oracle_target_samples(&self) -> Option<Vec<Sample<L>>> {
        let labels = self.target_oracle.as_ref()?;
        Some(
            self.target_covariates
                .iter()
                .zip(labels)
                .map(|(x, y)| Sample {
                    x: x.clone(),
                    y: y.clone(),
                })
                .collect(),
        )
    }
}

/// Result of the α-split of the source sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<L> {
    /// `ceil(alpha n)` samples used for moment estimation.
    pub estimation: Vec<Sample<L>>,
    /// The remaining samples, used for weighted ERM.
    pub erm: Vec<Sample<L>>,
    pub alpha: f64,
}

/// Seeded random partition of the source sample into estimation and ERM subsets.
pub fn split_alpha<L: Clone>(ds: &Dataset<L>, alpha: f64) -> Result<Split<L>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    let n = ds.n();
    let n_est = estimation_size(n, alpha);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(ds.seed, SPLIT_STREAM));
    let estimation = order[..n_est]
        .iter()
        .map(|&i| ds.source[i].clone())
        .collect();
    let erm = order[n_est..]
        .iter()
        .map(|&i| ds.source[i].clone())
        .collect();
    Ok(Split {
        estimation,
        erm,
        alpha,
    })
}

/// `ceil(alpha n)`, guarding against the float product landing just above an integer.
pub fn estimation_size(n: usize, alpha: f64) -> usize {
    let raw = alpha * n as f64;
    let rounded = raw.round();
    let size = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (size as usize).min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSynthConfig {
    num_classes: usize,
    noise_std: f64,
    seed: u64,
    source_masses: Vec<f64>,
    target_masses: Vec<f64>,
}

impl CategoricalSynthConfig {
    pub const DEFAULT_NOISE_STD: f64 = 0.5;

    pub fn new(num_classes: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid(
                "num_classes",
                format!("need k >= 2, got {num_classes}"),
            ));
        }
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(invalid("noise_std", format!("{noise_std} is not positive")));
        }
        let k = num_classes as f64;
        let alternating = |even: f64, odd: f64| -> Vec<f64> {
            (0..num_classes)
                .map(|c| if c % 2 == 0 { even / k } else { odd / k })
                .collect()
        };
        Ok(Self {
            num_classes,
            noise_std,
            seed,
            source_masses: normalize(&alternating(1.0, 3.0)),
            target_masses: normalize(&alternating(3.0, 1.0)),
        })
    }

    /// Replace the raw label masses (normalized here). Used to build degenerate instances.
    pub fn with_label_masses(mut self, source_raw: &[f64], target_raw: &[f64]) -> Result<Self> {
        for (name, raw) in [("source_masses", source_raw), ("target_masses", target_raw)] {
            if raw.len() != self.num_classes {
                return Err(invalid(
                    name,
                    format!("expected {} entries", self.num_classes),
                ));
            }
            if raw.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(invalid(name, "masses must be positive and finite"));
            }
        }
        self.source_masses = normalize(source_raw);
        self.target_masses = normalize(target_raw);
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn covariate_dim(&self) -> usize {
        self.num_classes
    }

    /// Source label marginal P_Y.
    pub fn source_label_probs(&self) -> &[f64] {
        &self.source_masses
    }

    /// Target label marginal Q_Y.
    pub fn target_label_probs(&self) -> &[f64] {
        &self.target_masses
    }

    /// Mean of X given Y = c.
    pub fn class_center(&self, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[c] = 1.0;
        v
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().map(|x| x.abs()).sum();
    v.iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSynthConfig {
    pub a: f64,
    pub b: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl RegressionSynthConfig {
    pub const DEFAULT_NOISE_STD: f64 = 0.1;

    pub fn new(a: f64, b: f64, noise_std: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            a,
            b,
            noise_std,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(name, format!("{v} is outside (0, 1)")));
            }
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(invalid(
                "noise_std",
                format!("{} is not positive", self.noise_std),
            ));
        }
        Ok(())
    }
}

/// Inverse CDF of the density `1 - t + 2 t y` on `[0, 1]`: the root in `[0, 1]` of
/// `(1 - t) y + t y^2 = u`, written in the cancellation-free form that reduces to `y = u`
/// as `t -> 0`.
pub fn tilted_inverse_cdf(tilt: f64, u: f64) -> f64 {
    let lin = 1.0 - tilt;
    let disc = lin * lin + 4.0 * tilt * u;
    2.0 * u / (lin + disc.sqrt())
}

/// CDF of the tilted density, `(1 - t) y + t y^2`.
pub fn tilted_cdf(tilt: f64, y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    (1.0 - tilt) * y + tilt * y * y
}

pub fn gen_categorical(cfg: &CategoricalSynthConfig, n: usize, m: usize) -> Result<Dataset<usize>> {
    if n == 0 {
        return Err(Error::EmptyInput("source sample size n"));
    }
    if m == 0 {
        return Err(Error::EmptyInput("target sample size m"));
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| invalid("noise_std", e.to_string()))?;
    let draw = |rng: &mut ChaCha8Rng, probs: &[f64], count: usize| -> Vec<Sample<usize>> {
        let labels = WeightedIndex::new(probs).expect("normalized positive masses");
        (0..count)
            .map(|_| {
                let y = labels.sample(rng);
                let x = cfg
                    .class_center(y)
                    .into_iter()
                    .map(|c| c + noise.sample(rng))
                    .collect();
                Sample { x, y }
            })
            .collect()
    };
    let source = draw(
        &mut stream_rng(cfg.seed, SOURCE_STREAM),
        cfg.source_label_probs(),
        n,
    );
    let target = draw(
        &mut stream_rng(cfg.seed, TARGET_STREAM),
        cfg.target_label_probs(),
        m,
    );
    let (target_covariates, labels) = target.into_iter().map(|s| (s.x, s.y)).unzip();
    Ok(Dataset {
        source,
        target_covariates,
        target_oracle: Some(labels),
        seed: cfg.seed,
    })
}

pub fn gen_regression(cfg: &RegressionSynthConfig, n: usize, m: usize) -> Result<Dataset<f64>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyInput("source sample size n"));
    }
    if m == 0 {
        return Err(Error::EmptyInput("target sample size m"));
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| invalid("noise_std", e.to_string()))?;
    let draw = |rng: &mut ChaCha8Rng, tilt: f64, count: usize| -> Vec<Sample<f64>> {
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let y = tilted_inverse_cdf(tilt, u);
                let x = vec![y + noise.sample(rng)];
                Sample { x, y }
            })
            .collect()
    };
    let source = draw(&mut stream_rng(cfg.seed, SOURCE_STREAM), cfg.a, n);
    let target = draw(&mut stream_rng(cfg.seed, TARGET_STREAM), cfg.b, m);
    let (target_covariates, labels) = target.into_iter().map(|s| (s.x, s.y)).unzip();
    Ok(Dataset {
        source,
        target_covariates,
        target_oracle: Some(labels),
        seed: cfg.seed,
    })
}

/// Analytic ω = Q_Y / P_Y.
pub fn true_weight_categorical(cfg: &CategoricalSynthConfig) -> Vec<f64> {
    cfg.target_label_probs()
        .iter()
        .zip(cfg.source_label_probs())
        .map(|(q, p)| q / p)
        .collect()
}

/// Analytic ω(y) = (2 b y + 1 - b) / (2 a y + 1 - a).
pub fn true_weight_function(cfg: &RegressionSynthConfig) -> impl Fn(f64) -> f64 + Send + Sync {
    let (a, b) = (cfg.a, cfg.b);
    move |y| (2.0 * b * y + 1.0 - b) / (2.0 * a * y + 1.0 - a)
}
