//! Importance-weighted empirical risk minimization on the held-out source split.

use std::str::FromStr;

use log::warn;
use nalgebra::DVector;

use crate::datagen::Sample;
use crate::error::{invalid, Error, Result};
use crate::functional::{evaluate_weight, FunctionalWeightEstimate};
use crate::predictors::{
    fit_kernel_ridge, fit_softmax, KernelRidgeModel, SoftmaxModel, SOFTMAX_L2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErmFamily {
    Logistic,
    KernelRidge,
}

impl ErmFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErmFamily::Logistic => "logistic",
            ErmFamily::KernelRidge => "kernel_ridge",
        }
    }
}

impl FromStr for ErmFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ErmFamily::Logistic),
            "kernel_ridge" => Ok(ErmFamily::KernelRidge),
            other => Err(invalid("family", format!("unknown family `{other}`"))),
        }
    }
}

/// A fitted predictor with a loss bounded in `[0, 1]`.
pub trait BoundedLoss {
    type Label;

    fn loss(&self, sample: &Sample<Self::Label>) -> f64;
}

impl BoundedLoss for SoftmaxModel {
    type Label = usize;

    fn loss(&self, s: &Sample<usize>) -> f64 {
        if self.predict(&s.x) == s.y {
            0.0
        } else {
            1.0
        }
    }
}

impl BoundedLoss for KernelRidgeModel {
    type Label = f64;

    fn loss(&self, s: &Sample<f64>) -> f64 {
        let e = self.predict(&s.x) - s.y;
        (e * e).min(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct WeightedERMResult<M> {
    pub model: M,
    pub family: ErmFamily,
    pub gamma: f64,
    /// `(1/n) sum_i omega_i loss_i` with the clamped weights.
    pub train_weighted_risk: f64,
    pub target_risk: Option<f64>,
}

impl<M: BoundedLoss> WeightedERMResult<M> {
    /// Evaluates and stores the oracle target risk.
    pub fn with_target_risk(mut self, target: &[Sample<M::Label>]) -> Result<Self> {
        self.target_risk = Some(oracle_target_risk(&self.model, target)?);
        Ok(self)
    }
}

/// `omega_gamma = 1 + gamma * theta_hat`.
pub fn blend_gamma(theta_hat: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    Ok(theta_hat.map(|t| 1.0 + gamma * t))
}

/// Functional counterpart of [`blend_gamma`], evaluated at the given labels.
pub fn blend_gamma_functional(
    est: &FunctionalWeightEstimate,
    gamma: f64,
    ys: &[f64],
) -> Result<Vec<f64>> {
    evaluate_weight(est, gamma, ys)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(invalid("gamma", format!("{gamma} is outside [0, 1]")))
    }
}

/// Picks `gamma` in `{0, 1}` minimizing `gamma * epsilon + (1 - gamma) * theta_max`; ties keep 0.
pub fn select_gamma(epsilon: f64, theta_max: f64) -> f64 {
    if epsilon < theta_max {
        1.0
    } else {
        0.0
    }
}

fn clamp_weights(weights: Vec<f64>) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(invalid("weights", "importance weights must be finite"));
    }
    let negative = weights.iter().filter(|w| **w < 0.0).count();
    if negative > 0 {
        warn!("clamping {negative} negative importance weights to zero");
    }
    let clamped: Vec<f64> = weights.into_iter().map(|w| w.max(0.0)).collect();
    if clamped.iter().all(|w| *w == 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(clamped)
}

fn weighted_risk<M: BoundedLoss>(model: &M, split: &[Sample<M::Label>], weights: &[f64]) -> f64 {
    let total: f64 = split
        .iter()
        .zip(weights)
        .map(|(s, w)| w * model.loss(s))
        .sum();
    total / split.len() as f64
}

/// Weighted multinomial logistic regression; `omega` holds one weight per class.
pub fn weighted_erm_categorical(
    split: &[Sample<usize>],
    omega: &[f64],
    k: usize,
    gamma: f64,
) -> Result<WeightedERMResult<SoftmaxModel>> {
    check_gamma(gamma)?;
    if split.is_empty() {
        return Err(Error::EmptyInput("ERM split"));
    }
    if omega.len() != k {
        return Err(invalid(
            "omega",
            format!("expected {k} class weights, got {}", omega.len()),
        ));
    }
    let mut per_sample = Vec::with_capacity(split.len());
    for s in split {
        if s.y >= k {
            return Err(Error::LabelOutOfRange {
                label: s.y,
                num_classes: k,
            });
        }
        per_sample.push(omega[s.y]);
    }
    let weights = clamp_weights(per_sample)?;
    let model = fit_softmax(split, &weights, k, SOFTMAX_L2)?;
    Ok(WeightedERMResult {
        train_weighted_risk: weighted_risk(&model, split, &weights),
        model,
        family: ErmFamily::Logistic,
        gamma,
        target_risk: None,
    })
}

/// Weighted kernel ridge regression; `weights` holds one weight per sample.
pub fn weighted_erm_regression(
    split: &[Sample<f64>],
    weights: &[f64],
    bandwidth: f64,
    ridge: f64,
    gamma: f64,
) -> Result<WeightedERMResult<KernelRidgeModel>> {
    check_gamma(gamma)?;
    if split.is_empty() {
        return Err(Error::EmptyInput("ERM split"));
    }
    if weights.len() != split.len() {
        return Err(invalid("weights", "one weight per sample required"));
    }
    let weights = clamp_weights(weights.to_vec())?;
    let model = fit_kernel_ridge(split, &weights, bandwidth, ridge)?;
    Ok(WeightedERMResult {
        train_weighted_risk: weighted_risk(&model, split, &weights),
        model,
        family: ErmFamily::KernelRidge,
        gamma,
        target_risk: None,
    })
}

/// Mean bounded loss on labeled target samples.
pub fn oracle_target_risk<M: BoundedLoss>(model: &M, target: &[Sample<M::Label>]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptyInput("target oracle samples"));
    }
    Ok(target.iter().map(|s| model.loss(s)).sum::<f64>() / target.len() as f64)
}
