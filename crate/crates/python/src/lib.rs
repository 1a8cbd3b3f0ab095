//! Python bindings: metric geometry, bound calculators, the experiment
//! registry and the coupled-oscillator case study.
//!
//! Matrices cross the boundary as lists of rows, vectors as lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stocontract_core::bounds::{self, BoundReport};
use stocontract_core::experiment::ExperimentConfig;
use stocontract_core::state_space::{matrix_from_rows, Side};
use stocontract_core::{cpg, geometry, state_space, Error, Matrix, StateVector};

fn to_py(e: Error) -> PyErr {
    let msg = format!("{}: {}", e.kind(), e);
    if e.is_input_error() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn mat(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    matrix_from_rows(rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(xs: &[f64]) -> StateVector {
    StateVector::from_column_slice(xs)
}

fn side_of(side: &str) -> PyResult<Side> {
    match side {
        "left" | "pre" => Ok(Side::Left),
        "right" | "post" => Ok(Side::Right),
        other => Err(PyValueError::new_err(format!("side must be 'left' or 'right', got {other}"))),
    }
}

/// Upper-triangular `Θ` with `ΘᵀΘ = M`.
#[pyfunction]
fn factor_metric(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&state_space::factor_metric(&mat(&m)?).map_err(to_py)?))
}

#[pyfunction]
fn metric_distance(x: Vec<f64>, y: Vec<f64>, m: Vec<Vec<f64>>) -> PyResult<f64> {
    geometry::metric_distance(&vec_of(&x), &vec_of(&y), &mat(&m)?).map_err(to_py)
}

/// `λ_max(FᵀF)` for `F = Θ₂ J Θ₁⁻¹`.
#[pyfunction]
fn contraction_factor(jacobian: Vec<Vec<f64>>, theta1: Vec<Vec<f64>>, theta2: Vec<Vec<f64>>) -> PyResult<f64> {
    let f = geometry::generalized_jacobian_of(&mat(&jacobian)?, &mat(&theta1)?, &mat(&theta2)?).map_err(to_py)?;
    Ok(geometry::contraction_factor_of(&f))
}

#[pyfunction]
fn classify_regime(beta: f64, lam: f64, tau: f64) -> String {
    bounds::classify_regime(beta, lam, tau).as_str().to_string()
}

/// Closed-form bound with its regime tag.
#[pyclass(name = "BoundReport", frozen)]
struct PyBoundReport {
    inner: BoundReport,
}

#[pymethods]
impl PyBoundReport {
    #[getter]
    fn theorem_tag(&self) -> String {
        self.inner.theorem_tag.as_str().to_string()
    }

    #[getter]
    fn asymptotic_bound(&self) -> f64 {
        self.inner.asymptotic_bound
    }

    #[getter]
    fn transient_rate_per_step(&self) -> f64 {
        self.inner.transient_rate_per_step
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn at_step(&self, k: usize) -> f64 {
        self.inner.at_step(k)
    }

    #[pyo3(signature = (t, side = "right"))]
    fn at_time(&self, t: f64, side: &str) -> PyResult<f64> {
        Ok(self.inner.at_time(t, side_of(side)?))
    }

    fn noise_free(&self) -> PyResult<Self> {
        Ok(Self {
            inner: bounds::apply_noisefree_corollary(&self.inner).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "BoundReport(theorem_tag='{}', asymptotic_bound={})",
            self.inner.theorem_tag, self.inner.asymptotic_bound
        )
    }
}

fn report(r: stocontract_core::Result<BoundReport>) -> PyResult<PyBoundReport> {
    r.map(|inner| PyBoundReport { inner }).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (beta, c, e0 = 0.0))]
fn discrete_ms_bound(beta: f64, c: f64, e0: f64) -> PyResult<PyBoundReport> {
    report(bounds::discrete_ms_bound(beta, c, e0))
}

#[pyfunction]
#[pyo3(signature = (beta, c, e0 = 0.0))]
fn discrete_distance_bound(beta: f64, c: f64, e0: f64) -> PyResult<PyBoundReport> {
    report(bounds::discrete_distance_bound(beta, c, e0))
}

#[pyfunction]
#[pyo3(signature = (beta, lam, c_d, c_c, tau, e0 = 0.0))]
fn hybrid_bound(beta: f64, lam: f64, c_d: f64, c_c: f64, tau: f64, e0: f64) -> PyResult<PyBoundReport> {
    report(bounds::hybrid_bound(beta, lam, c_d, c_c, tau, e0))
}

#[pyfunction]
#[pyo3(signature = (lam, c_c, e0 = 0.0))]
fn continuous_bound(lam: f64, c_c: f64, e0: f64) -> PyResult<PyBoundReport> {
    report(bounds::continuous_bound(lam, c_c, e0))
}

/// Experiment config over the built-in system registry.
#[pyclass(name = "ExperimentConfig")]
struct PyExperimentConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::builtin(name).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn set_ensemble(&mut self, pairs: usize, horizon: f64, seed: u64) {
        self.inner.ensemble.pairs = pairs;
        self.inner.ensemble.horizon = horizon;
        self.inner.ensemble.seed = seed;
    }

    /// Certificates as a JSON string.
    fn certify(&self, py: Python<'_>) -> PyResult<String> {
        let cfg = self.inner.clone();
        let out = py.detach(move || cfg.certify()).map_err(to_py)?;
        Ok(serde_json::to_string(&out).expect("certificates serialize"))
    }

    /// `(csv, verdict)` with `verdict` `None` when no finite bound applies.
    fn simulate(&self, py: Python<'_>) -> PyResult<(String, Option<bool>)> {
        let cfg = self.inner.clone();
        let out = py.detach(move || cfg.simulate()).map_err(to_py)?;
        Ok((out.to_csv(), out.verdict))
    }
}

#[pyfunction]
fn hopf_drift(x: f64, y: f64) -> (f64, f64) {
    let [a, b] = cpg::hopf_drift([x, y]);
    (a, b)
}

#[pyfunction]
fn hopf_sym_max(x: f64, y: f64) -> f64 {
    cpg::hopf_sym_max([x, y])
}

#[pyfunction]
fn reduced_discrete_factor(gamma: f64) -> PyResult<f64> {
    cpg::reduced_discrete_factor(gamma).map_err(to_py)
}

#[pyfunction]
fn sync_condition(gamma: f64, tau: f64) -> bool {
    cpg::sync_condition(gamma, tau)
}

#[pyfunction]
fn phase_locking_delta(state: Vec<f64>) -> PyResult<f64> {
    if state.len() != 6 {
        return Err(PyValueError::new_err("state must have 6 entries"));
    }
    Ok(cpg::phase_locking_delta(&vec_of(&state)))
}

/// `(closed_form, pipeline, caption)` steady-state bounds on `E δ`.
#[pyfunction]
#[pyo3(signature = (gamma = 0.2, tau = 0.1, sigma_c = 0.1, sigma_d = 0.05))]
fn theoretical_delta_bound(gamma: f64, tau: f64, sigma_c: f64, sigma_d: f64) -> PyResult<(f64, f64, f64)> {
    let params = cpg::CpgParams {
        gamma,
        tau,
        sigma_c,
        sigma_d,
        h: tau / 100.0,
    };
    let b = cpg::theoretical_delta_bound(&params).map_err(to_py)?;
    Ok((b.closed_form, b.pipeline, b.caption))
}

/// Runs the oscillator experiment and returns its summary JSON.
#[pyfunction]
#[pyo3(signature = (gamma = 0.2, runs = 200, horizon = 50.0, seed = 1))]
fn run_cpg(py: Python<'_>, gamma: f64, runs: usize, horizon: f64, seed: u64) -> PyResult<String> {
    let params = cpg::CpgParams::default().with_gamma(gamma);
    let cfg = cpg::CpgExperimentConfig::new(params, runs, horizon, seed);
    let exp = py.detach(move || cpg::run_cpg_experiment(&cfg)).map_err(to_py)?;
    Ok(exp.summary_json())
}

#[pymodule]
fn stocontract(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(factor_metric, m)?)?;
    m.add_function(wrap_pyfunction!(metric_distance, m)?)?;
    m.add_function(wrap_pyfunction!(contraction_factor, m)?)?;
    m.add_function(wrap_pyfunction!(classify_regime, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_ms_bound, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_distance_bound, m)?)?;
    m.add_function(wrap_pyfunction!(hybrid_bound, m)?)?;
    m.add_function(wrap_pyfunction!(continuous_bound, m)?)?;
    m.add_function(wrap_pyfunction!(hopf_drift, m)?)?;
    m.add_function(wrap_pyfunction!(hopf_sym_max, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_discrete_factor, m)?)?;
    m.add_function(wrap_pyfunction!(sync_condition, m)?)?;
    m.add_function(wrap_pyfunction!(phase_locking_delta, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_delta_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_cpg, m)?)?;
    m.add_class::<PyBoundReport>()?;
    m.add_class::<PyExperimentConfig>()?;
    Ok(())
}
