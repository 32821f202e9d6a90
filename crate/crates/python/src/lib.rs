//! Python bindings. Arrays cross the boundary as plain lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ptl_core::checkpoint::Checkpoint;
use ptl_core::experiments::{ExperimentConfig, RunConfig, Workspace};
use ptl_core::ode::DuffingParams;
use ptl_core::oracle::{self, IntegratorConfig};
use ptl_core::perturbation;
use ptl_core::training::train_duffing_class;
use ptl_core::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Duffing equation x'' + delta x' + alpha x + beta x^3 = gamma cos(omega t),
/// x(0) = x0, x'(0) = 0.
#[pyclass(name = "DuffingParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDuffing(DuffingParams);

#[pymethods]
impl PyDuffing {
    #[new]
    fn new(delta: f64, alpha: f64, beta: f64, gamma: f64, omega: f64, x0: f64) -> PyResult<Self> {
        let params = DuffingParams {
            delta,
            alpha,
            beta,
            gamma,
            omega,
            x0,
        };
        params.to_ode().map_err(to_py)?;
        Ok(Self(params))
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }
    #[getter]
    fn omega(&self) -> f64 {
        self.0.omega
    }
    #[getter]
    fn x0(&self) -> f64 {
        self.0.x0
    }

    /// Pointwise residual x'' + delta x' + alpha x + beta x^3 - gamma cos(omega t).
    fn residual(&self, t: f64, x: f64, xdot: f64, xddot: f64) -> f64 {
        self.0.residual(t, x, xdot, xddot)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "DuffingParams(delta={}, alpha={}, beta={}, gamma={}, omega={}, x0={})",
            p.delta, p.alpha, p.beta, p.gamma, p.omega, p.x0
        )
    }
}

/// Trained multi-head network plus the configuration that produced it.
#[pyclass(name = "Checkpoint", frozen, skip_from_py_object)]
struct PyCheckpoint(Checkpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Checkpoint::load(&path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    fn hash(&self) -> PyResult<String> {
        self.0.hash().map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn final_loss(&self) -> Option<f64> {
        self.0.final_loss
    }

    #[getter]
    fn hidden_columns(&self) -> usize {
        self.0.net.spec.h
    }

    #[getter]
    fn parameter_sets(&self) -> Vec<PyDuffing> {
        self.0.parameter_sets.iter().copied().map(PyDuffing).collect()
    }
}

/// Train from a TOML document with optional `[train]` and `[experiment]` tables.
#[pyfunction]
#[pyo3(signature = (config_toml = ""))]
fn train(config_toml: &str) -> PyResult<PyCheckpoint> {
    let cfg = RunConfig::from_toml_str(config_toml).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let (sets, outcome) = train_duffing_class(&cfg.train).map_err(to_py)?;
    Ok(PyCheckpoint(Checkpoint::new(cfg.train, sets, &outcome)))
}

/// Frozen trunk on a fixed transfer grid; solves new equations by transfer.
#[pyclass(name = "Solver", frozen)]
struct PySolver(Workspace);

#[pymethods]
impl PySolver {
    #[new]
    #[pyo3(signature = (checkpoint, transfer_points = 400, eval_points = 1000))]
    fn new(checkpoint: PyRef<'_, PyCheckpoint>, transfer_points: usize, eval_points: usize) -> PyResult<Self> {
        let cfg = ExperimentConfig {
            transfer_points,
            eval_points,
            ..Default::default()
        };
        cfg.validate().map_err(to_py)?;
        Workspace::new(&checkpoint.0, &cfg).map(Self).map_err(to_py)
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.0.eval_grid.clone()
    }

    /// Returns a dict with `t`, `x`, `residual_loss`, `regularization`,
    /// `assemble_seconds` and `cascade_seconds`.
    #[pyo3(signature = (params, p = 12))]
    fn solve<'py>(&self, py: Python<'py>, params: PyRef<'_, PyDuffing>, p: usize) -> PyResult<Bound<'py, PyDict>> {
        let sol = self.0.solve(&params.0, p).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("t", self.0.eval_grid.clone())?;
        out.set_item("x", self.0.trajectory(&sol))?;
        out.set_item("residual_loss", self.0.residual_loss(&sol, &params.0))?;
        out.set_item("regularization", sol.regularization)?;
        out.set_item("assemble_seconds", sol.assemble_seconds)?;
        out.set_item("cascade_seconds", sol.order_seconds.iter().sum::<f64>())?;
        Ok(out)
    }
}

/// Forcing terms of each cascade order as `[(coefficient, exponents), ...]`.
#[pyfunction]
fn cascade_terms(q: u32, epsilon: f64, p: usize) -> PyResult<Vec<Vec<(f64, Vec<u32>)>>> {
    let spec = perturbation::build_cascade_raw(q, epsilon, p).map_err(to_py)?;
    Ok(spec
        .levels
        .iter()
        .map(|level| level.terms.iter().map(|t| (t.coefficient, t.exponents.clone())).collect())
        .collect())
}

#[pyfunction]
fn multi_indices(q: u32, p: usize, j: usize) -> Vec<Vec<u32>> {
    perturbation::enumerate_multi_indices(q, p, j)
}

/// Reference solution `(x, v)` on the given grid.
#[pyfunction]
#[pyo3(signature = (params, t, rel_tol = 1e-10, abs_tol = 1e-12, max_steps = 200_000))]
fn integrate_duffing(
    params: PyRef<'_, PyDuffing>,
    t: Vec<f64>,
    rel_tol: f64,
    abs_tol: f64,
    max_steps: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = IntegratorConfig {
        rel_tol,
        abs_tol,
        max_steps,
    };
    let traj = oracle::integrate_duffing(&params.0, [params.0.x0, 0.0], &t, &cfg).map_err(to_py)?;
    Ok((traj.x, traj.v))
}

/// `(linf, rel_l2)` of `a - b`.
#[pyfunction]
fn compare(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let m = oracle::compare(&a, &b).map_err(to_py)?;
    Ok((m.linf, m.rel_l2))
}

#[pymodule]
fn ptl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDuffing>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PySolver>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(cascade_terms, m)?)?;
    m.add_function(wrap_pyfunction!(multi_indices, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_duffing, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
