//! Python bindings for the polynomial forward model.
//!
//! Parameters are passed as dicts keyed like the TOML config (`c`, `alpha`,
//! `kappa_Z`, `lambda_Y`, ..., plus an optional `spec`). Omitted two-factor
//! entries fall back to the reference estimates. Structured results come back
//! as plain dicts and lists.

use chrono::NaiveDate;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use polyfwd::calibrate::{calibrate, relative_errors};
use polyfwd::cli::config::RunConfig;
use polyfwd::cli::quotes::{grid, ingest_quotes, monthly_dates, quotes_csv, DatedQuotes};
use polyfwd::model::Measure;
use polyfwd::pricing::{ForwardModel, Leg};
use polyfwd::qkf::{noise_levels, run_filter, synthetic_quotes, FilterReport, DEFAULT_MAX_NEARBY};
use polyfwd::simhedge::{hedge_experiment as run_hedge_experiment, hedge_ratio as run_hedge_ratio, SimConfig};
use polyfwd::{Error, ErrorKind};

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config | ErrorKind::Data => PyValueError::new_err(e.to_string()),
        ErrorKind::Numerical => PyArithmeticError::new_err(e.to_string()),
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Builds a run config from an optional parameter dict.
fn run_config(params: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut text = String::new();
    if let Some(d) = params {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            if !valid_key(&key) {
                return Err(PyValueError::new_err(format!("invalid parameter name {key:?}")));
            }
            if key == "spec" {
                let s: String = v.extract()?;
                text.push_str(&format!("spec = {s:?}\n"));
            } else {
                let x: f64 = v
                    .extract()
                    .map_err(|_| PyValueError::new_err(format!("{key} must be a number")))?;
                if !x.is_finite() {
                    return Err(PyValueError::new_err(format!("{key} must be finite")));
                }
                text.push_str(&format!("{key} = {x:?}\n"));
            }
        }
    }
    RunConfig::from_toml_str(&text).map_err(py_err)
}

fn to_python<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A leg is a maturity (instantaneous delivery) or a `(start, end)` pair.
fn leg(obj: &Bound<'_, PyAny>) -> PyResult<Leg> {
    if let Ok((start, end)) = obj.extract::<(f64, f64)>() {
        return Ok(Leg::Period { start, end });
    }
    let maturity: f64 = obj
        .extract()
        .map_err(|_| PyValueError::new_err("a leg is a maturity or a (start, end) pair"))?;
    Ok(Leg::Instant { maturity })
}

#[pyclass(name = "Model", module = "polyfwd_py")]
struct PyModel {
    config: RunConfig,
    forward: ForwardModel,
}

impl PyModel {
    fn state_or_initial(&self, state: Option<Vec<f64>>) -> Vec<f64> {
        state.unwrap_or_else(|| self.config.params.initial_state())
    }
}

#[pymethods]
impl PyModel {
    /// `measure` is `"q"` (pricing) or `"p"` (real-world, two-factor only).
    #[new]
    #[pyo3(signature = (params=None, measure="q"))]
    fn new(params: Option<&Bound<'_, PyDict>>, measure: &str) -> PyResult<Self> {
        let config = run_config(params)?;
        let m = match measure {
            "q" | "Q" => Measure::Q,
            "p" | "P" => Measure::P(config.mpr),
            other => return Err(PyValueError::new_err(format!("unknown measure {other:?}"))),
        };
        let forward = ForwardModel::new(&config.params, &m).map_err(py_err)?;
        Ok(Self { config, forward })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.config.params.spec().state_dim()
    }

    #[getter]
    fn initial_state(&self) -> Vec<f64> {
        self.config.params.initial_state()
    }

    fn params(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &(&self.config.params, &self.config.mpr))
    }

    /// Generator matrix as a list of rows.
    fn generator(&self) -> Vec<Vec<f64>> {
        let g = self.forward.generator();
        (0..g.nrows()).map(|i| g.row(i).iter().copied().collect()).collect()
    }

    #[pyo3(signature = (t, maturity, state=None))]
    fn forward_instant(&self, t: f64, maturity: f64, state: Option<Vec<f64>>) -> PyResult<f64> {
        let x = self.state_or_initial(state);
        self.forward.forward_instant(t, maturity, &x).map_err(py_err)
    }

    #[pyo3(signature = (t, start, end, state=None))]
    fn forward_period(&self, t: f64, start: f64, end: f64, state: Option<Vec<f64>>) -> PyResult<f64> {
        let x = self.state_or_initial(state);
        self.forward.forward_period(t, start, end, &x).map_err(py_err)
    }

    #[pyo3(signature = (t, periods, state=None))]
    fn forward_curve(&self, t: f64, periods: Vec<(f64, f64)>, state: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = self.state_or_initial(state);
        self.forward.forward_curve(t, &x, &periods).map_err(py_err)
    }

    #[pyo3(signature = (t, leg1, leg2, state=None))]
    fn covariance(
        &self,
        t: f64,
        leg1: &Bound<'_, PyAny>,
        leg2: &Bound<'_, PyAny>,
        state: Option<Vec<f64>>,
    ) -> PyResult<f64> {
        let x = self.state_or_initial(state);
        self.forward.inst_covariance(t, leg(leg1)?, leg(leg2)?, &x).map_err(py_err)
    }

    #[pyo3(signature = (t, leg1, leg2, state=None))]
    fn correlation(
        &self,
        t: f64,
        leg1: &Bound<'_, PyAny>,
        leg2: &Bound<'_, PyAny>,
        state: Option<Vec<f64>>,
    ) -> PyResult<f64> {
        let x = self.state_or_initial(state);
        self.forward.inst_correlation(t, leg(leg1)?, leg(leg2)?, &x).map_err(py_err)
    }

    #[pyo3(signature = (t, legs, state=None))]
    fn correlation_matrix(
        &self,
        t: f64,
        legs: Vec<Bound<'_, PyAny>>,
        state: Option<Vec<f64>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let x = self.state_or_initial(state);
        let legs = legs.iter().map(leg).collect::<PyResult<Vec<_>>>()?;
        let m = self.forward.correlation_matrix(t, &legs, &x).map_err(py_err)?;
        Ok((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }

    /// Pricing-measure minus real-world expected delivery price.
    #[pyo3(signature = (t, leg, state=None))]
    fn risk_premium(&self, t: f64, leg: &Bound<'_, PyAny>, state: Option<Vec<f64>>) -> PyResult<f64> {
        let x = self.state_or_initial(state);
        let l = self::leg(leg)?;
        polyfwd::pricing::risk_premium(&self.config.params, &self.config.mpr, t, l, &x).map_err(py_err)
    }

    /// Position in the `k`-th nearby calendar-year contract hedging delivery
    /// over `[horizon, horizon + 1)`.
    fn hedge_ratio(&self, t: f64, state: Vec<f64>, k: u32, horizon: u32) -> PyResult<f64> {
        run_hedge_ratio(&self.config.params, t, &state, k, horizon).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(spec={:?})", self.config.params.spec())
    }
}

/// Reference two-factor parameters and market price of risk as one dict.
#[pyfunction]
fn reference_params(py: Python<'_>) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::default();
    let merged = PyDict::new(py);
    for part in [to_python(py, &cfg.two_factor().map_err(py_err)?)?, to_python(py, &cfg.mpr)?] {
        merged.update(part.bind(py).cast()?)?;
    }
    Ok(merged.into_any().unbind())
}

/// Synthetic monthly quotes in the CSV ingestion format.
#[pyfunction]
#[pyo3(signature = (start="2010-01-01", months=100, nearby=10, spread=1.0, noise_scale=1.0, seed=0, params=None))]
fn synthetic_quotes_csv(
    start: &str,
    months: usize,
    nearby: u32,
    spread: f64,
    noise_scale: f64,
    seed: u64,
    params: Option<&Bound<'_, PyDict>>,
) -> PyResult<String> {
    let cfg = run_config(params)?;
    let p = cfg.two_factor().map_err(py_err)?;
    let start = NaiveDate::parse_from_str(start, "%Y-%m-%d").map_err(|e| PyValueError::new_err(e.to_string()))?;
    if !(1..=DEFAULT_MAX_NEARBY).contains(&nearby) {
        return Err(PyValueError::new_err(format!("nearby must lie in 1..={DEFAULT_MAX_NEARBY}")));
    }
    if !(spread > 0.0) || !(noise_scale >= 0.0) {
        return Err(PyValueError::new_err("spread must be positive and noise_scale nonnegative"));
    }
    let dates = monthly_dates(start, months);
    let spreads = vec![spread; nearby as usize];
    let syn = synthetic_quotes(&p, &cfg.mpr, &grid(&dates), &spreads, noise_scale, seed).map_err(py_err)?;
    Ok(quotes_csv(&DatedQuotes { dates, series: syn.quotes }))
}

/// Runs the filter over a quote CSV file and returns its report.
#[pyfunction]
#[pyo3(signature = (path, params=None))]
fn filter_quotes(py: Python<'_>, path: &str, params: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let cfg = run_config(params)?;
    let p = cfg.two_factor().map_err(py_err)?;
    let quotes = ingest_quotes(path.as_ref()).map_err(py_err)?;
    let noise = noise_levels(&quotes.series).map_err(py_err)?;
    let out = py
        .detach(|| run_filter(&p, &cfg.mpr, &quotes.series, &noise, &cfg.filter))
        .map_err(py_err)?;
    let report = PyDict::new(py);
    report.set_item("filter", to_python(py, &FilterReport::from(&out))?)?;
    report.set_item("errors", to_python(py, &relative_errors(&out))?)?;
    Ok(report.into_any().unbind())
}

/// Calibrates to a quote CSV file. `config` is TOML text in the CLI format;
/// only its `[calibration]` table is used.
#[pyfunction]
#[pyo3(signature = (path, config=None))]
fn calibrate_quotes(py: Python<'_>, path: &str, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_toml_str(config.unwrap_or("")).map_err(py_err)?;
    let quotes = ingest_quotes(path.as_ref()).map_err(py_err)?;
    let result = py
        .detach(|| calibrate(&quotes.series, &cfg.calibration))
        .map_err(py_err)?;
    to_python(py, &result)
}

/// Rolling-hedge exposure statistics for each horizon in years.
#[pyfunction]
#[pyo3(signature = (horizons, n_paths=5000, steps_per_year=120, seed=0, params=None))]
fn hedge_experiment(
    py: Python<'_>,
    horizons: Vec<u32>,
    n_paths: usize,
    steps_per_year: u32,
    seed: u64,
    params: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let cfg = run_config(params)?;
    let p = cfg.two_factor().map_err(py_err)?;
    let sim = SimConfig { n_paths, steps_per_year, seed, ..SimConfig::default() };
    let stats = py
        .detach(|| run_hedge_experiment(&p, &cfg.mpr, &horizons, &sim))
        .map_err(py_err)?;
    to_python(py, &stats)
}

#[pymodule]
fn polyfwd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(reference_params, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_quotes_csv, m)?)?;
    m.add_function(wrap_pyfunction!(filter_quotes, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_quotes, m)?)?;
    m.add_function(wrap_pyfunction!(hedge_experiment, m)?)?;
    Ok(())
}
