//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts/lists on the Python side.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};
use suplin_bsde::error::Error;
use suplin_bsde::experiments::{cli_main, run_experiment, ExperimentConfig};
use suplin_bsde::growth_inequalities::{minimal_young_constant, young_log_holds, YoungLogParams};
use suplin_bsde::test_functions::{phi_derivatives, phi_eval, psi_eval, verify_test_function, TestFunction, VerificationGrid};
use suplin_bsde::threshold_odes::{critical_threshold, solve_mu, solve_nu, Regime, DEFAULT_STEPS};

pub type Result<T> = std::result::Result<T, Error>;

/// μ (and ν where defined) on the solver grid.
pub fn curve_json(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64) -> Result<Value> {
    let mu = solve_mu(beta, gamma, lambda, eps, horizon, DEFAULT_STEPS)?;
    let c = solve_nu(mu.clone()).unwrap_or(mu);
    Ok(json!({
        "regime": c.regime.name(),
        "s": c.s_grid,
        "mu": c.mu_values,
        "nu": c.nu_values,
        "mu_T": c.mu_t(),
        "nu_T": c.nu_t(),
    }))
}

pub fn critical(beta: f64, gamma: f64, lambda: f64, horizon: f64) -> Result<f64> {
    critical_threshold(beta, gamma, lambda, Regime::from_lambda(lambda)?, horizon)
}

pub fn young_holds(x: f64, y: f64, k: f64, lambda: f64, c: f64) -> Result<bool> {
    young_log_holds(x, y, &YoungLogParams::new(k, lambda, c)?)
}

/// `φ` and its closed-form derivatives at `(s, x)`.
pub fn phi_json(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64, s: f64, x: f64) -> Result<Value> {
    let tf = TestFunction::new(beta, gamma, lambda, eps, horizon, DEFAULT_STEPS)?;
    let d = phi_derivatives(&tf, s, x)?;
    Ok(json!({ "phi": phi_eval(&tf, s, x)?, "d_s": d.d_s, "d_x": d.d_x, "d_xx": d.d_xx }))
}

pub fn verify_json(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64, grid: (usize, usize, usize)) -> Result<Value> {
    let tf = TestFunction::new(beta, gamma, lambda, eps, horizon, DEFAULT_STEPS)?;
    let r = verify_test_function(&tf, &VerificationGrid::new(horizon, grid.0, grid.1, grid.2))?;
    Ok(serde_json::to_value(r)?)
}

/// Runs a TOML experiment config; returns the report with a `passed` field.
pub fn experiment_json(config: &str) -> Result<Value> {
    let cfg = ExperimentConfig::from_toml(config)?;
    let (mut v, passed) = run_experiment(&cfg)?;
    v["passed"] = json!(passed);
    Ok(v)
}

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::InvalidParameter(_) | Error::NotAboveCritical { .. } | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, v: Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(&v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyfunction]
#[pyo3(signature = (beta, gamma, lam, eps=0.0, horizon=1.0))]
fn threshold_curve(py: Python<'_>, beta: f64, gamma: f64, lam: f64, eps: f64, horizon: f64) -> PyResult<Py<PyAny>> {
    to_py(py, curve_json(beta, gamma, lam, eps, horizon).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (beta, gamma, lam, horizon=1.0))]
fn critical_mu(beta: f64, gamma: f64, lam: f64, horizon: f64) -> PyResult<f64> {
    critical(beta, gamma, lam, horizon).map_err(py_err)
}

#[pyfunction]
fn young_constant(k: f64, lam: f64) -> PyResult<f64> {
    minimal_young_constant(k, lam).map_err(py_err)
}

#[pyfunction]
fn young_inequality_holds(x: f64, y: f64, k: f64, lam: f64, c: f64) -> PyResult<bool> {
    young_holds(x, y, k, lam, c).map_err(py_err)
}

#[pyfunction]
fn psi(x: f64, mu: f64, lam: f64) -> PyResult<f64> {
    psi_eval(x, mu, lam).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (beta, gamma, lam, eps, s, x, horizon=1.0))]
fn phi(py: Python<'_>, beta: f64, gamma: f64, lam: f64, eps: f64, s: f64, x: f64, horizon: f64) -> PyResult<Py<PyAny>> {
    to_py(py, phi_json(beta, gamma, lam, eps, horizon, s, x).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (beta, gamma, lam, eps, horizon=1.0, grid=(12, 40, 40)))]
fn verify_testfn(py: Python<'_>, beta: f64, gamma: f64, lam: f64, eps: f64, horizon: f64, grid: (usize, usize, usize)) -> PyResult<Py<PyAny>> {
    to_py(py, verify_json(beta, gamma, lam, eps, horizon, grid).map_err(py_err)?)
}

#[pyfunction]
fn run_config(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let v = py.detach(|| experiment_json(config)).map_err(py_err)?;
    to_py(py, v)
}

/// Runs the `suplin` command line; returns its exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| cli_main(std::iter::once("suplin".to_string()).chain(args)))
}

#[pymodule]
#[pyo3(name = "suplin_bsde")]
fn suplin_bsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", suplin_bsde::experiments::VERSION)?;
    m.add_function(wrap_pyfunction!(threshold_curve, m)?)?;
    m.add_function(wrap_pyfunction!(critical_mu, m)?)?;
    m.add_function(wrap_pyfunction!(young_constant, m)?)?;
    m.add_function(wrap_pyfunction!(young_inequality_holds, m)?)?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(verify_testfn, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
