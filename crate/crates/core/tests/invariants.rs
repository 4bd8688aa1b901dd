use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use labelshift::categorical::e1_direct;
use labelshift::concentration::{categorical_radii, functional_radii, unit_grid};
use labelshift::datagen::{
    gen_categorical, gen_regression, split_alpha, true_weight_function, CategoricalSynthConfig,
    RegressionSynthConfig,
};
use labelshift::experiment::relative_error;
use labelshift::functional::{
    e3_direct, e4_regularized, relative_grid_error, FunctionalWeightEstimate,
};
use labelshift::moments::{
    estimate_categorical_moments_with, estimate_kernel_moments, population_moments,
};
use labelshift::predictors::{train_kernel_regressor, KernelRidgeModel};

fn sign_statistic(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| if *v > 0.5 { 1.0 } else { -1.0 })
        .collect()
}

fn sign_statistic_means(cfg: &CategoricalSynthConfig) -> DMatrix<f64> {
    let k = cfg.num_classes();
    let normal = Normal::new(0.0, 1.0).unwrap();
    DMatrix::from_fn(k, k, |i, j| {
        1.0 - 2.0 * normal.cdf((0.5 - cfg.class_center(j)[i]) / cfg.noise_std())
    })
}

#[test]
fn population_moments_recover_theta_for_several_k() {
    for k in [3, 5, 8] {
        let cfg = CategoricalSynthConfig::new(k, 0.4, 0).unwrap();
        let mom = population_moments(
            &sign_statistic_means(&cfg),
            cfg.source_label_probs(),
            cfg.target_label_probs(),
        )
        .unwrap();
        let theta = e1_direct(&mom).unwrap().theta_hat;
        for c in 0..k {
            let truth = cfg.target_label_probs()[c] / cfg.source_label_probs()[c] - 1.0;
            assert!((theta[c] - truth).abs() < 1e-10, "k={k} class {c}");
        }
    }
}

#[test]
fn target_moment_coverage() {
    let (k, n, m, delta) = (4, 2000, 2000, 0.1);
    let mut covered = 0;
    for seed in 0..200 {
        let cfg = CategoricalSynthConfig::new(k, 0.5, seed).unwrap();
        let ds = gen_categorical(&cfg, n, m).unwrap();
        let split = split_alpha(&ds, 0.5).unwrap();
        let mom = estimate_categorical_moments_with(
            &split.estimation,
            &ds.target_covariates,
            k,
            k,
            sign_statistic,
        )
        .unwrap();
        let q = sign_statistic_means(&cfg) * DVector::from_column_slice(cfg.target_label_probs());
        let radius = categorical_radii(k, k, 0.5, n, m, delta).unwrap().delta_q;
        if (&mom.q_hat - q).norm() <= radius {
            covered += 1;
        }
    }
    assert!(covered >= 180, "covered {covered}/200");
}

fn functional_run(
    a: f64,
    b: f64,
    n: usize,
    seed: u64,
    bandwidth: f64,
    direct: bool,
) -> (FunctionalWeightEstimate, f64) {
    let cfg =
        RegressionSynthConfig::new(a, b, RegressionSynthConfig::DEFAULT_NOISE_STD, seed).unwrap();
    let ds = gen_regression(&cfg, n, n).unwrap();
    let split = split_alpha(&ds, 0.5).unwrap();
    let u = train_kernel_regressor(&split.erm, bandwidth, KernelRidgeModel::DEFAULT_RIDGE).unwrap();
    let km =
        estimate_kernel_moments(&split.estimation, &ds.target_covariates, &u, bandwidth).unwrap();
    let est = if direct {
        e3_direct(&km).unwrap()
    } else {
        let lambda = functional_radii(0.5, n, n, 0.1, 1.0).unwrap().delta_t;
        e4_regularized(&km, lambda).unwrap()
    };
    let err = relative_grid_error(&est, true_weight_function(&cfg), &unit_grid(100));
    (est, err)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn no_shift_functional_estimate_is_flat() {
    let (_, err) = functional_run(
        0.5,
        0.5,
        2000,
        3,
        KernelRidgeModel::DEFAULT_BANDWIDTH,
        false,
    );
    assert!(err < 0.2, "grid error {err}");
}

#[test]
fn direct_functional_estimate_improves_with_samples() {
    let small = median(
        (0..10)
            .map(|s| functional_run(0.2, 0.8, 500, s, 0.3, true).1)
            .collect(),
    );
    let large = median(
        (0..10)
            .map(|s| functional_run(0.2, 0.8, 4000, s, 0.3, true).1)
            .collect(),
    );
    assert!(
        large <= small,
        "median error {small} at n=500, {large} at n=4000"
    );
}

#[test]
fn functional_bound_coverage() {
    let delta = 0.1;
    let grid = unit_grid(100);
    let mut covered = 0;
    for seed in 0..50 {
        let n = 1000;
        let cfg =
            RegressionSynthConfig::new(0.2, 0.8, RegressionSynthConfig::DEFAULT_NOISE_STD, seed)
                .unwrap();
        let (est, _) = functional_run(0.2, 0.8, n, seed, 0.3, false);
        let truth = true_weight_function(&cfg);
        let diffs: Vec<f64> = grid
            .iter()
            .map(|&y| est.theta(y) - (truth(y) - 1.0))
            .collect();
        let err = (diffs.iter().map(|d| d * d).sum::<f64>() / grid.len() as f64).sqrt();
        let theta_max = grid
            .iter()
            .map(|&y| (truth(y) - 1.0).abs())
            .fold(0.0, f64::max);
        let r = functional_radii(0.5, n, n, delta / 3.0, 1.0).unwrap();
        let bound = 2.0 * est.op_inv_norm_proxy * (r.delta_q + r.delta_p + theta_max * r.delta_t);
        if err <= bound {
            covered += 1;
        }
    }
    assert!(covered >= 45, "covered {covered}/50");
}

#[test]
fn constant_weight_baseline_on_grid() {
    let cfg = RegressionSynthConfig::new(0.2, 0.8, 0.1, 0).unwrap();
    let truth = true_weight_function(&cfg);
    let grid = unit_grid(100);
    let omega: Vec<f64> = grid.iter().map(|&y| truth(y)).collect();
    let ones = vec![1.0; grid.len()];
    // independent evaluation: omega(y) = (1.6 y + 0.2) / (0.4 y + 0.8) on y = i / 99
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let y = i as f64 / 99.0;
        let w = (1.6 * y + 0.2) / (0.4 * y + 0.8);
        num += (1.0 - w).powi(2);
        den += w * w;
    }
    let expected = (num / den).sqrt();
    assert!((relative_error(&ones, &omega).unwrap() - expected).abs() < 1e-12);
    let flat = FunctionalWeightEstimate {
        beta: DVector::zeros(1),
        anchors: vec![0.5],
        method: labelshift::functional::FunctionalMethod::E4,
        lambda_used: 0.0,
        rkhs_norm: 0.0,
        bandwidth: 0.3,
        op_inv_norm_proxy: 1.0,
        condition_number: 1.0,
        basis_rank: 0,
        jitter: 0.0,
    };
    assert!((relative_grid_error(&flat, &truth, &grid) - expected).abs() < 1e-12);
}
