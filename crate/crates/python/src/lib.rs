//! Python bindings.
//!
//! Models, fits and reports cross the boundary as JSON text in the same
//! format the command-line tool reads and writes; return series are plain
//! lists of floats.
//!
//! Example:
//!     >>> import json, onarch
//!     >>> model = onarch.reference_model()
//!     >>> json.loads(onarch.check_stability(model))["eigenvalues"]
//!     >>> panel = onarch.simulate(model, stocks=4, days=600, seed=1)

use std::path::PathBuf;

use onarch_core::calibrate::{calibrate as run_calibration, CalibrationOptions, FitResult};
use onarch_core::data::ReturnPanel;
use onarch_core::evaluate::{isos_compare, wald_universality, IsosOptions};
use onarch_core::simulate::{simulate_panel, SimConfig, SimModel};
use onarch_core::validity::{check_positivity as positivity, check_stability as stability};
use onarch_core::{model, BivariateModel, EquationParams, Error, Target};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_target(target: &str) -> PyResult<Target> {
    match target {
        "day" => Ok(Target::Day),
        "night" => Ok(Target::Night),
        "daily" => Ok(Target::Daily),
        _ => Err(PyValueError::new_err(format!(
            "unknown target '{target}' (expected day, night or daily)"
        ))),
    }
}

fn load_model(text: &str) -> PyResult<BivariateModel> {
    let m: BivariateModel = from_json(text)?;
    m.validate().map_err(py_err)?;
    Ok(m)
}

/// Bundled reference pair of equations (maximum lag 512) as JSON.
#[pyfunction]
fn reference_model() -> PyResult<String> {
    to_json(&model::reference::model())
}

/// Eigenvalues, spectral radius and stationary averages of a bivariate model.
#[pyfunction]
fn check_stability(model: &str) -> PyResult<String> {
    to_json(&stability(&load_model(model)?))
}

/// Positivity criteria of one equation (`target` is "day" or "night").
#[pyfunction]
fn check_positivity(py: Python<'_>, equation: &str, target: &str) -> PyResult<String> {
    let params: EquationParams = from_json(equation)?;
    let target = parse_target(target)?;
    let report = py.detach(|| positivity(&params, target)).map_err(py_err)?;
    to_json(&report)
}

/// Filtered intra-day and overnight variances for the dates after the
/// warm-up of one stock.
#[pyfunction]
fn filter_volatility(model: &str, intraday: Vec<f64>, overnight: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = load_model(model)?;
    let paths = onarch_core::filter_volatility(&m, &intraday, &overnight).map_err(py_err)?;
    Ok((paths.day, paths.night))
}

fn panel_dict<'py>(py: Python<'py>, panel: &ReturnPanel) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tickers", panel.tickers.clone())?;
    d.set_item("dates", panel.dates.iter().map(|x| x.to_string()).collect::<Vec<_>>())?;
    d.set_item("intraday", panel.intraday.clone())?;
    d.set_item("overnight", panel.overnight.clone())?;
    d.set_item("daily", panel.daily.clone())?;
    Ok(d)
}

/// Simulate a panel from a bivariate model. Returns a dict with `tickers`,
/// `dates` and per-stock `intraday`, `overnight` and `daily` lists.
#[pyfunction]
#[pyo3(signature = (model, stocks, days, seed, burn_in=None, force=false))]
fn simulate<'py>(
    py: Python<'py>,
    model: &str,
    stocks: usize,
    days: usize,
    seed: u64,
    burn_in: Option<usize>,
    force: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let sim = SimModel::Bivariate(load_model(model)?);
    let config = SimConfig {
        burn_in,
        force,
        ..SimConfig::new(stocks, days, seed)
    };
    let panel = py.detach(|| simulate_panel(&sim, &config)).map_err(py_err)?;
    panel_dict(py, &panel)
}

/// Read a return-panel CSV (`ticker,date,r_intraday,r_overnight,r_daily`).
#[pyfunction]
fn read_panel(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let panel = ReturnPanel::read_csv(&path).map_err(py_err)?;
    panel_dict(py, &panel)
}

/// Run the three-step calibration of one equation on a panel CSV and return
/// the final fit as JSON.
#[pyfunction]
#[pyo3(signature = (panel, target, q_free=63, q=512, constrain_s2_zero=false))]
fn calibrate(
    py: Python<'_>,
    panel: PathBuf,
    target: &str,
    q_free: usize,
    q: usize,
    constrain_s2_zero: bool,
) -> PyResult<String> {
    let target = parse_target(target)?;
    let panel = ReturnPanel::read_csv(&panel).map_err(py_err)?;
    let options = CalibrationOptions {
        q_free,
        q,
        constrain_s2_zero,
        ..Default::default()
    };
    let cal = py.detach(|| run_calibration(&panel, target, &options)).map_err(py_err)?;
    to_json(cal.final_fit())
}

/// In-sample/out-of-sample comparison on a panel CSV, as JSON.
#[pyfunction]
#[pyo3(signature = (panel, q=512, q_free=63, seed=0))]
fn evaluate(py: Python<'_>, panel: PathBuf, q: usize, q_free: usize, seed: u64) -> PyResult<String> {
    let panel = ReturnPanel::read_csv(&panel).map_err(py_err)?;
    let options = IsosOptions {
        q,
        q_free,
        seed,
        ..Default::default()
    };
    let report = py.detach(|| isos_compare(&panel, &options)).map_err(py_err)?;
    to_json(&report)
}

/// Wald test of equal parameters between two fits given as JSON.
#[pyfunction]
#[pyo3(signature = (fit1, fit2, exclude=Vec::new()))]
fn wald(fit1: &str, fit2: &str, exclude: Vec<String>) -> PyResult<String> {
    let f1: FitResult = from_json(fit1)?;
    let f2: FitResult = from_json(fit2)?;
    to_json(&wald_universality(&f1, &f2, &exclude).map_err(py_err)?)
}

#[pymodule]
fn onarch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(reference_model, m)?)?;
    m.add_function(wrap_pyfunction!(check_stability, m)?)?;
    m.add_function(wrap_pyfunction!(check_positivity, m)?)?;
    m.add_function(wrap_pyfunction!(filter_volatility, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(read_panel, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(wald, m)?)?;
    m.add("__version__", onarch_core::VERSION)?;
    Ok(())
}
