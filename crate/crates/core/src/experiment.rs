//! Seeded experiment sweeps over the synthetic generators, written as CSV.
//!
//! A config is a flat `key = value` file, one experiment per file. Blank lines and text after
//! `#` are ignored. Recognized keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `scenario` | `categorical_vs_k`, `categorical_vs_n`, `functional_vs_n`, `single_run` | required |
//! | `estimator` | `E1`, `E2` (categorical) or `E3`, `E4` (functional) | required |
//! | `statistic_mode` | `simplex`, `hypercube`, `kernel_regressor` | `hypercube` / `kernel_regressor` |
//! | `sweep` | comma-separated, strictly increasing k or n values | required for sweeps |
//! | `seeds` | comma-separated seeds | `0` |
//! | `n`, `m` | source and target sizes when not swept; `m` defaults to `n` | `4000` |
//! | `k` | number of classes when not swept | `4` |
//! | `alpha`, `gamma`, `delta` | split fraction, weight blend, confidence | `0.5`, `1`, `0.1` |
//! | `noise_std` | covariate noise | generator default |
//! | `source_masses`, `target_masses` | raw label masses overriding the categorical generator | unset |
//! | `a`, `b` | source and target tilts of the regression generator | `0.2`, `0.8` |
//! | `bandwidth` | label kernel bandwidth | `0.9` |
//! | `statistic_bandwidth`, `ridge` | kernel regressor settings | `bandwidth`, `0.01` |
//! | `lambda` | E4 regularization, a number or `delta_t` | `delta_t` |
//! | `e2_radius_scale` | multiplier on the E2 regularization radius | `1` |
//! | `theta_cap` | norm above which an E2 estimate is flagged | `10` |
//! | `erm` | run weighted ERM and report the oracle target risk | `false` |
//! | `timing` | record wall-clock milliseconds per run | `false` |
//! | `output` | CSV path | `results.csv` |

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;

use crate::categorical::{check_burn_in_categorical, e1_direct, e2_regularized, inverse_norm};
use crate::concentration::{
    categorical_radii, categorical_report, functional_radii, functional_report, unit_grid,
};
use crate::datagen::{
    gen_categorical, gen_regression, split_alpha, true_weight_categorical, true_weight_function,
    CategoricalSynthConfig, RegressionSynthConfig,
};
use crate::erm::{
    blend_gamma, oracle_target_risk, weighted_erm_categorical, weighted_erm_regression,
};
use crate::error::{Error, Result};
use crate::functional::{
    check_burn_in_functional, e3_direct, e4_regularized, evaluate_weight, relative_grid_error,
};
use crate::moments::{estimate_categorical_moments, estimate_kernel_moments};
use crate::predictors::{
    train_hypercube, train_kernel_regressor, train_simplex, KernelRidgeModel, StatisticMode,
};

pub const CSV_COLUMNS: [&str; 12] = [
    "scenario",
    "estimator",
    "statistic_mode",
    "k_or_bandwidth",
    "n",
    "m",
    "seed",
    "relative_error",
    "epsilon_delta",
    "burn_in_ok",
    "target_risk",
    "wall_ms",
];

/// Points of the uniform evaluation grid on `[0, 1]`.
pub const GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    CategoricalVsK,
    CategoricalVsN,
    FunctionalVsN,
    SingleRun,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::CategoricalVsK => "categorical_vs_k",
            Scenario::CategoricalVsN => "categorical_vs_n",
            Scenario::FunctionalVsN => "functional_vs_n",
            Scenario::SingleRun => "single_run",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "categorical_vs_k" => Ok(Scenario::CategoricalVsK),
            "categorical_vs_n" => Ok(Scenario::CategoricalVsN),
            "functional_vs_n" => Ok(Scenario::FunctionalVsN),
            "single_run" => Ok(Scenario::SingleRun),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    E1,
    E2,
    E3,
    E4,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::E1 => "E1",
            Estimator::E2 => "E2",
            Estimator::E3 => "E3",
            Estimator::E4 => "E4",
        }
    }

    pub fn is_functional(&self) -> bool {
        matches!(self, Estimator::E3 | Estimator::E4)
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Estimator::E1),
            "E2" => Ok(Estimator::E2),
            "E3" => Ok(Estimator::E3),
            "E4" => Ok(Estimator::E4),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    /// The Hilbert-space radius of the source operator at confidence `delta`.
    DeltaT,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub estimator: Estimator,
    pub statistic_mode: StatisticMode,
    pub sweep: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub m: Option<usize>,
    pub k: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub noise_std: Option<f64>,
    pub source_masses: Option<Vec<f64>>,
    pub target_masses: Option<Vec<f64>>,
    pub a: f64,
    pub b: f64,
    pub bandwidth: f64,
    pub statistic_bandwidth: Option<f64>,
    pub ridge: f64,
    pub lambda: LambdaPolicy,
    pub e2_radius_scale: f64,
    pub theta_cap: f64,
    pub erm: bool,
    pub timing: bool,
    pub output: PathBuf,
    lines: HashMap<&'static str, usize>,
}

const KEYS: [&str; 26] = [
    "scenario",
    "estimator",
    "statistic_mode",
    "sweep",
    "seeds",
    "n",
    "m",
    "k",
    "alpha",
    "gamma",
    "delta",
    "noise_std",
    "source_masses",
    "target_masses",
    "a",
    "b",
    "bandwidth",
    "statistic_bandwidth",
    "ridge",
    "lambda",
    "e2_radius_scale",
    "theta_cap",
    "erm",
    "timing",
    "output",
    "seed",
];

fn config_error(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_error(line, format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_value(line, key, v))
        .collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_error(
            line,
            format!("`{key}`: expected true or false, got `{value}`"),
        )),
    }
}

impl ExperimentConfig {
    /// Defaults for everything except the scenario and estimator.
    pub fn new(scenario: Scenario, estimator: Estimator) -> Self {
        Self {
            scenario,
            estimator,
            statistic_mode: if estimator.is_functional() {
                StatisticMode::KernelRegressor
            } else {
                StatisticMode::HyperCube
            },
            sweep: Vec::new(),
            seeds: vec![0],
            n: 4000,
            m: None,
            k: 4,
            alpha: 0.5,
            gamma: 1.0,
            delta: 0.1,
            noise_std: None,
            source_masses: None,
            target_masses: None,
            a: 0.2,
            b: 0.8,
            bandwidth: KernelRidgeModel::DEFAULT_BANDWIDTH,
            statistic_bandwidth: None,
            ridge: KernelRidgeModel::DEFAULT_RIDGE,
            lambda: LambdaPolicy::DeltaT,
            e2_radius_scale: 1.0,
            theta_cap: 10.0,
            erm: false,
            timing: false,
            output: PathBuf::from("results.csv"),
            lines: HashMap::new(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(&'static str, usize, String)> = Vec::new();
        let mut seen: HashMap<&'static str, usize> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_error(
                    line,
                    format!("expected `key = value`, got `{content}`"),
                ));
            };
            let key = key.trim();
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(config_error(line, format!("unknown key `{key}`")));
            };
            let known = if known == "seed" { "seeds" } else { known };
            if let Some(first) = seen.insert(known, line) {
                return Err(config_error(
                    line,
                    format!("`{key}` already set on line {first}"),
                ));
            }
            entries.push((known, line, value.trim().to_string()));
        }
        let lookup = |key: &str| entries.iter().find(|(k, _, _)| *k == key);
        let (_, line, value) =
            lookup("scenario").ok_or_else(|| config_error(0, "missing key `scenario`"))?;
        let scenario = value.parse().map_err(|e: String| config_error(*line, e))?;
        let (_, line, value) =
            lookup("estimator").ok_or_else(|| config_error(0, "missing key `estimator`"))?;
        let estimator = value.parse().map_err(|e: String| config_error(*line, e))?;
        let mut cfg = Self::new(scenario, estimator);

        for (key, line, value) in &entries {
            let (line, value) = (*line, value.as_str());
            match *key {
                "scenario" | "estimator" => {}
                "statistic_mode" => {
                    cfg.statistic_mode = value
                        .parse()
                        .map_err(|e: Error| config_error(line, e.to_string()))?
                }
                "sweep" => cfg.sweep = parse_list(line, key, value)?,
                "seeds" => cfg.seeds = parse_list(line, key, value)?,
                "n" => cfg.n = parse_value(line, key, value)?,
                "m" => cfg.m = Some(parse_value(line, key, value)?),
                "k" => cfg.k = parse_value(line, key, value)?,
                "alpha" => cfg.alpha = parse_value(line, key, value)?,
                "gamma" => cfg.gamma = parse_value(line, key, value)?,
                "delta" => cfg.delta = parse_value(line, key, value)?,
                "noise_std" => cfg.noise_std = Some(parse_value(line, key, value)?),
                "source_masses" => cfg.source_masses = Some(parse_list(line, key, value)?),
                "target_masses" => cfg.target_masses = Some(parse_list(line, key, value)?),
                "a" => cfg.a = parse_value(line, key, value)?,
                "b" => cfg.b = parse_value(line, key, value)?,
                "bandwidth" => cfg.bandwidth = parse_value(line, key, value)?,
                "statistic_bandwidth" => {
                    cfg.statistic_bandwidth = Some(parse_value(line, key, value)?)
                }
                "ridge" => cfg.ridge = parse_value(line, key, value)?,
                "lambda" => {
                    cfg.lambda = if value.eq_ignore_ascii_case("delta_t") {
                        LambdaPolicy::DeltaT
                    } else {
                        LambdaPolicy::Fixed(parse_value(line, key, value)?)
                    }
                }
                "e2_radius_scale" => cfg.e2_radius_scale = parse_value(line, key, value)?,
                "theta_cap" => cfg.theta_cap = parse_value(line, key, value)?,
                "erm" => cfg.erm = parse_bool(line, key, value)?,
                "timing" => cfg.timing = parse_bool(line, key, value)?,
                "output" => cfg.output = PathBuf::from(value),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.lines = seen;
        cfg.validate()?;
        Ok(cfg)
    }

    fn line_of(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(0)
    }

    /// Checks cross-field consistency; errors carry the line of the offending key.
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(config_error(self.line_of(key), msg));
        let functional_scenario = self.scenario == Scenario::FunctionalVsN;
        let categorical_scenario = matches!(
            self.scenario,
            Scenario::CategoricalVsK | Scenario::CategoricalVsN
        );
        if functional_scenario && !self.estimator.is_functional() {
            return fail(
                "estimator",
                format!("{} requires estimator E3 or E4", self.scenario.as_str()),
            );
        }
        if categorical_scenario && self.estimator.is_functional() {
            return fail(
                "estimator",
                format!(
                    "{} requires estimator E1 or E2; E3 and E4 need a functional scenario",
                    self.scenario.as_str()
                ),
            );
        }
        let mode_functional = self.statistic_mode == StatisticMode::KernelRegressor;
        if mode_functional != self.estimator.is_functional() {
            return fail(
                "statistic_mode",
                format!(
                    "statistic mode {} does not fit estimator {}",
                    self.statistic_mode.as_str(),
                    self.estimator.as_str()
                ),
            );
        }
        if self.scenario != Scenario::SingleRun {
            if self.sweep.is_empty() {
                return fail("sweep", "sweep values are required".into());
            }
            if self.sweep.windows(2).any(|w| w[1] <= w[0]) {
                return fail("sweep", "sweep values must be strictly increasing".into());
            }
        }
        if self.scenario == Scenario::CategoricalVsK && self.sweep.iter().any(|&k| k < 2) {
            return fail("sweep", "number of classes must be at least 2".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds", "at least one seed is required".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail("alpha", format!("alpha = {} is outside (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma", format!("gamma = {} is outside [0, 1]", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta", format!("delta = {} is outside (0, 1)", self.delta));
        }
        if self.erm && self.alpha >= 1.0 {
            return fail(
                "erm",
                "weighted ERM needs alpha < 1 to leave an ERM split".into(),
            );
        }
        if !(self.e2_radius_scale >= 0.0) {
            return fail("e2_radius_scale", "must be nonnegative".into());
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l >= 0.0) {
                return fail("lambda", "must be nonnegative".into());
            }
        }
        if self.source_masses.is_some() != self.target_masses.is_some() {
            return fail(
                "source_masses",
                "source_masses and target_masses must be given together".into(),
            );
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize, usize)> {
        // (k, n, m) per sweep value
        let m_for = |n: usize| self.m.unwrap_or(n);
        match self.scenario {
            Scenario::CategoricalVsK => self
                .sweep
                .iter()
                .map(|&k| (k, self.n, m_for(self.n)))
                .collect(),
            Scenario::CategoricalVsN | Scenario::FunctionalVsN => {
                self.sweep.iter().map(|&n| (self.k, n, m_for(n))).collect()
            }
            Scenario::SingleRun => vec![(self.k, self.n, m_for(self.n))],
        }
    }
}

/// One row of the output CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub estimator: Estimator,
    pub statistic_mode: StatisticMode,
    /// Number of classes on the categorical path, label kernel bandwidth on the functional path.
    pub k_or_bandwidth: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub relative_error: f64,
    pub epsilon_delta: f64,
    pub burn_in_ok: bool,
    pub target_risk: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// Median aggregate over seeds of one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub k_or_bandwidth: f64,
    pub n: usize,
    pub m: usize,
    pub seeds: usize,
    pub median_relative_error: f64,
    pub median_epsilon_delta: f64,
    pub median_target_risk: Option<f64>,
    pub burn_in_fraction: f64,
}

/// `|estimate - oracle|_2 / |oracle|_2`.
pub fn relative_error(estimate: &[f64], oracle: &[f64]) -> Result<f64> {
    if estimate.len() != oracle.len() {
        return Err(crate::error::invalid(
            "estimate",
            "length differs from the oracle",
        ));
    }
    let den: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(crate::error::invalid("oracle", "zero norm"));
    }
    let num: f64 = estimate
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Runs a single (sweep value, seed) cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    k: usize,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<RunRecord> {
    let start = Instant::now();
    let mut record = if cfg.estimator.is_functional() {
        run_functional(cfg, n, m, seed)?
    } else {
        run_categorical(cfg, k, n, m, seed)?
    };
    if cfg.timing {
        record.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(record)
}

fn run_categorical(
    cfg: &ExperimentConfig,
    k: usize,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<RunRecord> {
    let noise = cfg
        .noise_std
        .unwrap_or(CategoricalSynthConfig::DEFAULT_NOISE_STD);
    let mut synth = CategoricalSynthConfig::new(k, noise, seed)?;
    if let (Some(src), Some(tgt)) = (&cfg.source_masses, &cfg.target_masses) {
        synth = synth.with_label_masses(src, tgt)?;
    }
    let ds = gen_categorical(&synth, n, m)?;
    let split = split_alpha(&ds, cfg.alpha)?;
    let train = if split.erm.is_empty() {
        &split.estimation
    } else {
        &split.erm
    };
    let g = match cfg.statistic_mode {
        StatisticMode::Simplex => train_simplex(train, k)?,
        StatisticMode::HyperCube => train_hypercube(train, k)?,
        StatisticMode::KernelRegressor => unreachable!("validated config"),
    };
    let mom = estimate_categorical_moments(&split.estimation, &ds.target_covariates, &g, k)?;
    let d = mom.output_dim();
    let estimate = match cfg.estimator {
        Estimator::E1 => e1_direct(&mom)?,
        _ => {
            let radius =
                categorical_radii(d, k, cfg.alpha, n, m, cfg.delta)?.delta_t * cfg.e2_radius_scale;
            e2_regularized(&mom, radius, cfg.theta_cap)?
        }
    };
    let omega = true_weight_categorical(&synth);
    let theta_norm = omega.iter().map(|w| (w - 1.0).powi(2)).sum::<f64>().sqrt();
    let relative_error = relative_error(estimate.omega_hat.as_slice(), &omega)?;
    let report = categorical_report(
        d,
        k,
        cfg.alpha,
        n,
        m,
        cfg.delta,
        theta_norm,
        inverse_norm(&mom.t_hat),
    )?;
    let burn_in_ok = check_burn_in_categorical(&mom, cfg.alpha, n, cfg.delta)?;
    let target_risk = if cfg.erm {
        let weights = blend_gamma(&estimate.theta_hat, cfg.gamma)?;
        let fit = weighted_erm_categorical(&split.erm, weights.as_slice(), k, cfg.gamma)?;
        let oracle = ds
            .oracle_target_samples()
            .ok_or(Error::EmptyInput("target oracle labels"))?;
        Some(oracle_target_risk(&fit.model, &oracle)?)
    } else {
        None
    };
    Ok(RunRecord {
        scenario: cfg.scenario,
        estimator: cfg.estimator,
        statistic_mode: cfg.statistic_mode,
        k_or_bandwidth: k as f64,
        n,
        m,
        seed,
        relative_error,
        epsilon_delta: report.epsilon_delta,
        burn_in_ok,
        target_risk,
        wall_ms: None,
    })
}

fn run_functional(cfg: &ExperimentConfig, n: usize, m: usize, seed: u64) -> Result<RunRecord> {
    let noise = cfg
        .noise_std
        .unwrap_or(RegressionSynthConfig::DEFAULT_NOISE_STD);
    let synth = RegressionSynthConfig::new(cfg.a, cfg.b, noise, seed)?;
    let ds = gen_regression(&synth, n, m)?;
    let split = split_alpha(&ds, cfg.alpha)?;
    let train = if split.erm.is_empty() {
        &split.estimation
    } else {
        &split.erm
    };
    let stat_bw = cfg.statistic_bandwidth.unwrap_or(cfg.bandwidth);
    let u = train_kernel_regressor(train, stat_bw, cfg.ridge)?;
    let km = estimate_kernel_moments(&split.estimation, &ds.target_covariates, &u, cfg.bandwidth)?;
    let estimate = match cfg.estimator {
        Estimator::E3 => e3_direct(&km)?,
        _ => {
            let lambda = match cfg.lambda {
                LambdaPolicy::DeltaT => {
                    functional_radii(cfg.alpha, n, m, cfg.delta, km.kappa_bar)?.delta_t
                }
                LambdaPolicy::Fixed(l) => l,
            };
            e4_regularized(&km, lambda)?
        }
    };
    let truth = true_weight_function(&synth);
    let relative_error = relative_grid_error(&estimate, &truth, &unit_grid(GRID_POINTS));
    let proxy = estimate.op_inv_norm_proxy;
    let report = functional_report(
        cfg.alpha,
        n,
        m,
        cfg.delta,
        km.kappa_bar,
        estimate.rkhs_norm,
        proxy,
    )?;
    let burn_in_ok = check_burn_in_functional(n, cfg.alpha, cfg.delta, km.kappa_bar, proxy)?;
    let target_risk = if cfg.erm {
        let labels: Vec<f64> = split.erm.iter().map(|s| s.y).collect();
        let weights = evaluate_weight(&estimate, cfg.gamma, &labels)?;
        let fit = weighted_erm_regression(&split.erm, &weights, stat_bw, cfg.ridge, cfg.gamma)?;
        let oracle = ds
            .oracle_target_samples()
            .ok_or(Error::EmptyInput("target oracle labels"))?;
        Some(oracle_target_risk(&fit.model, &oracle)?)
    } else {
        None
    };
    Ok(RunRecord {
        scenario: cfg.scenario,
        estimator: cfg.estimator,
        statistic_mode: cfg.statistic_mode,
        k_or_bandwidth: cfg.bandwidth,
        n,
        m,
        seed,
        relative_error,
        epsilon_delta: report.epsilon_delta,
        burn_in_ok,
        target_risk,
        wall_ms: None,
    })
}

/// Runs every (sweep value, seed) cell, sorted by sweep value then seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut rows = Vec::new();
    for (k, n, m) in cfg.cells() {
        for &seed in &seeds {
            let row = run_cell(cfg, k, n, m, seed)?;
            info!(
                "{} {} k={} n={} m={} seed={} relative_error={:.4}",
                cfg.scenario.as_str(),
                cfg.estimator.as_str(),
                k,
                n,
                m,
                seed,
                row.relative_error
            );
            rows.push(row);
        }
    }
    Ok(rows)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let len = values.len();
    if len == 0 {
        f64::NAN
    } else if len % 2 == 1 {
        values[len / 2]
    } else {
        0.5 * (values[len / 2 - 1] + values[len / 2])
    }
}

/// Median aggregates grouped by sweep value, in row order.
pub fn summarize(rows: &[RunRecord]) -> Vec<SummaryRecord> {
    let mut groups: Vec<Vec<&RunRecord>> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|g| {
            let first = g[0];
            first.k_or_bandwidth == row.k_or_bandwidth && first.n == row.n && first.m == row.m
        }) {
            Some(group) => group.push(row),
            None => groups.push(vec![row]),
        }
    }
    groups
        .into_iter()
        .map(|group| {
            let first = group[0];
            let mut errors: Vec<f64> = group.iter().map(|r| r.relative_error).collect();
            let mut eps: Vec<f64> = group.iter().map(|r| r.epsilon_delta).collect();
            let mut risks: Vec<f64> = group.iter().filter_map(|r| r.target_risk).collect();
            let burn = group.iter().filter(|r| r.burn_in_ok).count() as f64 / group.len() as f64;
            SummaryRecord {
                k_or_bandwidth: first.k_or_bandwidth,
                n: first.n,
                m: first.m,
                seeds: group.len(),
                median_relative_error: median(&mut errors),
                median_epsilon_delta: median(&mut eps),
                median_target_risk: if risks.is_empty() {
                    None
                } else {
                    Some(median(&mut risks))
                },
                burn_in_fraction: burn,
            }
        })
        .collect()
}

/// C-style `%.{precision}g` formatting.
pub fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format_g(x, 9)).unwrap_or_else(|| "NA".into())
}

fn timestamp_line() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# generated_unix_time={secs}\n")
}

/// CSV text for the rows, without the timestamp header line.
pub fn rows_to_csv(rows: &[RunRecord]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario.as_str(),
            r.estimator.as_str(),
            r.statistic_mode.as_str(),
            format_g(r.k_or_bandwidth, 9),
            r.n,
            r.m,
            r.seed,
            format_g(r.relative_error, 9),
            format_g(r.epsilon_delta, 9),
            r.burn_in_ok,
            fmt_opt(r.target_risk),
            fmt_opt(r.wall_ms),
        );
    }
    out
}

pub fn summary_to_csv(cfg: &ExperimentConfig, summary: &[SummaryRecord]) -> String {
    let mut out = String::from(
        "scenario,estimator,statistic_mode,k_or_bandwidth,n,m,seeds,median_relative_error,\
         median_epsilon_delta,median_target_risk,burn_in_fraction\n",
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            cfg.scenario.as_str(),
            cfg.estimator.as_str(),
            cfg.statistic_mode.as_str(),
            format_g(s.k_or_bandwidth, 9),
            s.n,
            s.m,
            s.seeds,
            format_g(s.median_relative_error, 9),
            format_g(s.median_epsilon_delta, 9),
            fmt_opt(s.median_target_risk),
            format_g(s.burn_in_fraction, 9),
        );
    }
    out
}

/// `<dir>/<stem>_summary.csv` next to `path`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    path.with_file_name(format!("{stem}_summary.csv"))
}

/// Runs the experiment and writes the per-run CSV and its summary. Returns the rows.
pub fn run_to_files(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<RunRecord>> {
    let rows = run_experiment(cfg)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, timestamp_line() + &rows_to_csv(&rows))?;
    let summary = summarize(&rows);
    fs::write(
        summary_path(path),
        timestamp_line() + &summary_to_csv(cfg, &summary),
    )?;
    Ok(rows)
}
