//! Python bindings for the `labelshift` crate.

use labelshift::categorical::{e1_direct, e2_regularized, CategoricalWeightEstimate};
use labelshift::concentration::{self, ConfidenceReport};
use labelshift::datagen::{
    gen_categorical, gen_regression, split_alpha, true_weight_categorical, true_weight_function,
    CategoricalSynthConfig, RegressionSynthConfig,
};
use labelshift::error::Error;
use labelshift::experiment::{run_experiment as run_rows, ExperimentConfig};
use labelshift::functional::{
    e3_direct, e4_regularized, evaluate_weight, FunctionalWeightEstimate,
};
use labelshift::moments::{
    estimate_categorical_moments, estimate_kernel_moments, KernelMoments, MomentEstimates,
};
use labelshift::predictors::{
    train_hypercube, train_kernel_regressor, train_simplex, KernelRidgeModel, StatisticMode,
};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. }
        | Error::EmptyInput(_)
        | Error::LabelOutOfRange { .. }
        | Error::Config { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Gaussian-mixture classification generator with shifted label marginals.
#[pyclass(name = "CategoricalSynth", frozen)]
struct PyCategoricalSynth {
    inner: CategoricalSynthConfig,
}

#[pymethods]
impl PyCategoricalSynth {
    #[new]
    #[pyo3(signature = (k, noise_std=CategoricalSynthConfig::DEFAULT_NOISE_STD, seed=0, source_masses=None, target_masses=None))]
    fn new(
        k: usize,
        noise_std: f64,
        seed: u64,
        source_masses: Option<Vec<f64>>,
        target_masses: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let mut inner = CategoricalSynthConfig::new(k, noise_std, seed).map_err(to_py)?;
        match (source_masses, target_masses) {
            (Some(s), Some(t)) => inner = inner.with_label_masses(&s, &t).map_err(to_py)?,
            (None, None) => {}
            _ => {
                return Err(PyValueError::new_err(
                    "give both source_masses and target_masses",
                ))
            }
        }
        Ok(Self { inner })
    }

    #[getter]
    fn source_probs(&self) -> Vec<f64> {
        self.inner.source_label_probs().to_vec()
    }

    #[getter]
    fn target_probs(&self) -> Vec<f64> {
        self.inner.target_label_probs().to_vec()
    }

    fn true_weights(&self) -> Vec<f64> {
        true_weight_categorical(&self.inner)
    }

    /// Returns `(source_x, source_y, target_x)`.
    fn generate(&self, n: usize, m: usize) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>)> {
        let ds = gen_categorical(&self.inner, n, m).map_err(to_py)?;
        let (xs, ys) = ds.source.into_iter().map(|s| (s.x, s.y)).unzip();
        Ok((xs, ys, ds.target_covariates))
    }

    /// Generates data, trains the statistic on the ERM split and estimates moments on the rest.
    #[pyo3(signature = (n, m, mode="simplex", alpha=0.5))]
    fn moments(&self, n: usize, m: usize, mode: &str, alpha: f64) -> PyResult<PyMoments> {
        let k = self.inner.num_classes();
        let ds = gen_categorical(&self.inner, n, m).map_err(to_py)?;
        let split = split_alpha(&ds, alpha).map_err(to_py)?;
        let train = if split.erm.is_empty() {
            &split.estimation
        } else {
            &split.erm
        };
        let g = match mode.parse::<StatisticMode>().map_err(to_py)? {
            StatisticMode::Simplex => train_simplex(train, k),
            StatisticMode::HyperCube => train_hypercube(train, k),
            StatisticMode::KernelRegressor => {
                return Err(PyValueError::new_err(
                    "kernel_regressor is for the regression generator",
                ))
            }
        }
        .map_err(to_py)?;
        let inner = estimate_categorical_moments(&split.estimation, &ds.target_covariates, &g, k)
            .map_err(to_py)?;
        Ok(PyMoments { inner })
    }
}

/// Empirical or population moments `(T, p, q)` of a statistic.
#[pyclass(name = "Moments", frozen)]
struct PyMoments {
    inner: MomentEstimates,
}

#[pymethods]
impl PyMoments {
    #[new]
    #[pyo3(signature = (t_hat, p_hat, q_hat, n_est=1, m=1))]
    fn new(
        t_hat: Vec<Vec<f64>>,
        p_hat: Vec<f64>,
        q_hat: Vec<f64>,
        n_est: usize,
        m: usize,
    ) -> PyResult<Self> {
        let t_hat = matrix_from_rows(&t_hat)?;
        if p_hat.len() != t_hat.nrows() || q_hat.len() != t_hat.nrows() {
            return Err(PyValueError::new_err(
                "p_hat and q_hat must have one entry per row of t_hat",
            ));
        }
        Ok(Self {
            inner: MomentEstimates {
                t_hat,
                p_hat: DVector::from_vec(p_hat),
                q_hat: DVector::from_vec(q_hat),
                n_est,
                m,
            },
        })
    }

    #[getter]
    fn t_hat(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.t_hat)
    }

    #[getter]
    fn p_hat(&self) -> Vec<f64> {
        self.inner.p_hat.iter().copied().collect()
    }

    #[getter]
    fn q_hat(&self) -> Vec<f64> {
        self.inner.q_hat.iter().copied().collect()
    }

    #[getter]
    fn n_est(&self) -> usize {
        self.inner.n_est
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }
}

#[pyclass(name = "CategoricalEstimate", frozen)]
struct PyCategoricalEstimate {
    inner: CategoricalWeightEstimate,
}

#[pymethods]
impl PyCategoricalEstimate {
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta_hat.iter().copied().collect()
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.inner.omega_hat.iter().copied().collect()
    }

    #[getter]
    fn method(&self) -> String {
        format!("{:?}", self.inner.method)
    }

    #[getter]
    fn inverse_norm(&self) -> f64 {
        self.inner.diagnostics.inverse_norm
    }

    #[getter]
    fn smallest_singular_value(&self) -> f64 {
        self.inner.diagnostics.smallest_singular_value
    }

    #[getter]
    fn exceeds_theta_cap(&self) -> bool {
        self.inner.diagnostics.exceeds_theta_cap
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.diagnostics.iterations
    }

    fn __repr__(&self) -> String {
        format!(
            "CategoricalEstimate(method={}, omega={:?})",
            self.method(),
            self.omega()
        )
    }
}

/// Regression generator with tilted label densities on `[0, 1]`.
#[pyclass(name = "RegressionSynth", frozen)]
struct PyRegressionSynth {
    inner: RegressionSynthConfig,
}

#[pymethods]
impl PyRegressionSynth {
    #[new]
    #[pyo3(signature = (a, b, noise_std=RegressionSynthConfig::DEFAULT_NOISE_STD, seed=0))]
    fn new(a: f64, b: f64, noise_std: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: RegressionSynthConfig::new(a, b, noise_std, seed).map_err(to_py)?,
        })
    }

    fn true_weight(&self, ys: Vec<f64>) -> Vec<f64> {
        let w = true_weight_function(&self.inner);
        ys.into_iter().map(w).collect()
    }

    /// Returns `(source_x, source_y, target_x)`.
    fn generate(&self, n: usize, m: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
        let ds = gen_regression(&self.inner, n, m).map_err(to_py)?;
        let (xs, ys) = ds.source.into_iter().map(|s| (s.x, s.y)).unzip();
        Ok((xs, ys, ds.target_covariates))
    }

    /// Generates data, fits the kernel regressor on the ERM split and embeds the rest.
    #[pyo3(signature = (n, m, bandwidth=KernelRidgeModel::DEFAULT_BANDWIDTH, alpha=0.5, ridge=KernelRidgeModel::DEFAULT_RIDGE))]
    fn kernel_moments(
        &self,
        n: usize,
        m: usize,
        bandwidth: f64,
        alpha: f64,
        ridge: f64,
    ) -> PyResult<PyKernelMoments> {
        let ds = gen_regression(&self.inner, n, m).map_err(to_py)?;
        let split = split_alpha(&ds, alpha).map_err(to_py)?;
        let train = if split.erm.is_empty() {
            &split.estimation
        } else {
            &split.erm
        };
        let u = train_kernel_regressor(train, bandwidth, ridge).map_err(to_py)?;
        let inner =
            estimate_kernel_moments(&split.estimation, &ds.target_covariates, &u, bandwidth)
                .map_err(to_py)?;
        Ok(PyKernelMoments { inner })
    }
}

#[pyclass(name = "KernelMoments", frozen)]
struct PyKernelMoments {
    inner: KernelMoments,
}

#[pymethods]
impl PyKernelMoments {
    #[new]
    fn new(
        anchors: Vec<f64>,
        source_images: Vec<f64>,
        target_images: Vec<f64>,
        bandwidth: f64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: KernelMoments::from_images(anchors, source_images, target_images, bandwidth)
                .map_err(to_py)?,
        })
    }

    #[getter]
    fn n_est(&self) -> usize {
        self.inner.n_est()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn kappa_bar(&self) -> f64 {
        self.inner.kappa_bar
    }
}

#[pyclass(name = "FunctionalEstimate", frozen)]
struct PyFunctionalEstimate {
    inner: FunctionalWeightEstimate,
}

#[pymethods]
impl PyFunctionalEstimate {
    fn theta(&self, ys: Vec<f64>) -> Vec<f64> {
        ys.into_iter().map(|y| self.inner.theta(y)).collect()
    }

    #[pyo3(signature = (ys, gamma=1.0))]
    fn omega(&self, ys: Vec<f64>, gamma: f64) -> PyResult<Vec<f64>> {
        evaluate_weight(&self.inner, gamma, &ys).map_err(to_py)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn rkhs_norm(&self) -> f64 {
        self.inner.rkhs_norm
    }

    #[getter]
    fn lambda_used(&self) -> f64 {
        self.inner.lambda_used
    }

    #[getter]
    fn op_inv_norm_proxy(&self) -> f64 {
        self.inner.op_inv_norm_proxy
    }

    #[getter]
    fn condition_number(&self) -> f64 {
        self.inner.condition_number
    }

    #[getter]
    fn basis_rank(&self) -> usize {
        self.inner.basis_rank
    }
}

#[pyfunction]
fn e1(moments: &PyMoments) -> PyResult<PyCategoricalEstimate> {
    Ok(PyCategoricalEstimate {
        inner: e1_direct(&moments.inner).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (moments, delta_t, theta_cap=10.0))]
fn e2(moments: &PyMoments, delta_t: f64, theta_cap: f64) -> PyResult<PyCategoricalEstimate> {
    Ok(PyCategoricalEstimate {
        inner: e2_regularized(&moments.inner, delta_t, theta_cap).map_err(to_py)?,
    })
}

#[pyfunction]
fn e3(moments: &PyKernelMoments) -> PyResult<PyFunctionalEstimate> {
    Ok(PyFunctionalEstimate {
        inner: e3_direct(&moments.inner).map_err(to_py)?,
    })
}

#[pyfunction]
fn e4(moments: &PyKernelMoments, lam: f64) -> PyResult<PyFunctionalEstimate> {
    Ok(PyFunctionalEstimate {
        inner: e4_regularized(&moments.inner, lam).map_err(to_py)?,
    })
}

/// Returns `(delta_p, delta_q, delta_t)`.
#[pyfunction]
fn categorical_radii(
    d: usize,
    k: usize,
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
) -> PyResult<(f64, f64, f64)> {
    let r = concentration::categorical_radii(d, k, alpha, n, m, delta).map_err(to_py)?;
    Ok((r.delta_p, r.delta_q, r.delta_t))
}

/// Returns `(delta_p, delta_q, delta_t)`.
#[pyfunction]
#[pyo3(signature = (alpha, n, m, delta, kappa_bar=1.0))]
fn functional_radii(
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
    kappa_bar: f64,
) -> PyResult<(f64, f64, f64)> {
    let r = concentration::functional_radii(alpha, n, m, delta, kappa_bar).map_err(to_py)?;
    Ok((r.delta_p, r.delta_q, r.delta_t))
}

fn report_dict<'py>(py: Python<'py>, r: &ConfidenceReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("delta_p", r.delta_p)?;
    out.set_item("delta_q", r.delta_q)?;
    out.set_item("delta_t", r.delta_t)?;
    out.set_item("epsilon_delta", r.epsilon_delta)?;
    Ok(out)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn categorical_report<'py>(
    py: Python<'py>,
    d: usize,
    k: usize,
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
    theta_max: f64,
    inverse_norm: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = concentration::categorical_report(d, k, alpha, n, m, delta, theta_max, inverse_norm)
        .map_err(to_py)?;
    report_dict(py, &r)
}

#[pyfunction]
fn functional_report<'py>(
    py: Python<'py>,
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
    kappa_bar: f64,
    theta_max: f64,
    op_inv_norm_proxy: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = concentration::functional_report(
        alpha,
        n,
        m,
        delta,
        kappa_bar,
        theta_max,
        op_inv_norm_proxy,
    )
    .map_err(to_py)?;
    report_dict(py, &r)
}

/// Runs a `key = value` experiment config and returns one dict per row.
#[pyfunction]
#[pyo3(signature = (config_text, seeds=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_text: &str,
    seeds: Option<Vec<u64>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = ExperimentConfig::parse(config_text).map_err(to_py)?;
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    let rows = py.detach(|| run_rows(&cfg)).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("scenario", r.scenario.as_str())?;
            d.set_item("estimator", r.estimator.as_str())?;
            d.set_item("statistic_mode", r.statistic_mode.as_str())?;
            d.set_item("k_or_bandwidth", r.k_or_bandwidth)?;
            d.set_item("n", r.n)?;
            d.set_item("m", r.m)?;
            d.set_item("seed", r.seed)?;
            d.set_item("relative_error", r.relative_error)?;
            d.set_item("epsilon_delta", r.epsilon_delta)?;
            d.set_item("burn_in_ok", r.burn_in_ok)?;
            d.set_item("target_risk", r.target_risk)?;
            d.set_item("wall_ms", r.wall_ms)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn labelshift_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCategoricalSynth>()?;
    m.add_class::<PyMoments>()?;
    m.add_class::<PyCategoricalEstimate>()?;
    m.add_class::<PyRegressionSynth>()?;
    m.add_class::<PyKernelMoments>()?;
    m.add_class::<PyFunctionalEstimate>()?;
    m.add_function(wrap_pyfunction!(e1, m)?)?;
    m.add_function(wrap_pyfunction!(e2, m)?)?;
    m.add_function(wrap_pyfunction!(e3, m)?)?;
    m.add_function(wrap_pyfunction!(e4, m)?)?;
    m.add_function(wrap_pyfunction!(categorical_radii, m)?)?;
    m.add_function(wrap_pyfunction!(functional_radii, m)?)?;
    m.add_function(wrap_pyfunction!(categorical_report, m)?)?;
    m.add_function(wrap_pyfunction!(functional_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
