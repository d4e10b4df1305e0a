//! Python bindings: simulation, dwell histograms and the three estimators.

use std::collections::BTreeMap;

use blinkfit::bench::{self, Scenario};
use blinkfit::dwell;
use blinkfit::ga::{run_ga, GaConfig};
use blinkfit::lm::{estimate_lm, LmConfig};
use blinkfit::mfr;
use blinkfit::seed::{rng_from_seed, DEFAULT_SEED};
use blinkfit::sim::{generate_trace, PhotonNoise, TraceConfig};
use blinkfit::{BlinkError, EmitterModel, Method, State};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: BlinkError) -> PyErr {
    match e {
        BlinkError::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_state(s: &str) -> PyResult<State> {
    s.parse().map_err(err)
}

#[pyclass(name = "BlinkTrace", module = "blinkfit_py", from_py_object)]
#[derive(Clone)]
struct PyTrace(blinkfit::BlinkTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.0.counts.clone()
    }
    #[getter]
    fn bin_width(&self) -> f64 {
        self.0.bin_width
    }
    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration()
    }
    #[getter]
    fn truth(&self) -> Option<(f64, f64)> {
        self.0.truth
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
    fn __len__(&self) -> usize {
        self.0.len()
    }
    fn __repr__(&self) -> String {
        format!("BlinkTrace(bins={}, bin_width={})", self.0.len(), self.0.bin_width)
    }
}

#[pyclass(name = "DwellHistogram", module = "blinkfit_py", from_py_object)]
#[derive(Clone)]
struct PyHistogram(dwell::DwellHistogram);

#[pymethods]
impl PyHistogram {
    #[new]
    fn new(state: &str, bin_width: f64, pairs: Vec<(u32, u64)>) -> PyResult<Self> {
        dwell::DwellHistogram::new(parse_state(state)?, bin_width, pairs)
            .map(PyHistogram)
            .map_err(err)
    }
    #[getter]
    fn state(&self) -> &'static str {
        self.0.state.as_str()
    }
    #[getter]
    fn bin_width(&self) -> f64 {
        self.0.bin_width
    }
    /// `(duration_index, occurrences)` pairs.
    #[getter]
    fn pairs(&self) -> Vec<(u32, u64)> {
        self.0.pairs.clone()
    }
    /// `(duration_s, occurrences)` for occupied bins.
    fn points(&self) -> Vec<(f64, f64)> {
        self.0.points()
    }
    fn total_occurrences(&self) -> u64 {
        self.0.total_occurrences()
    }
    fn mean_dwell(&self) -> PyResult<f64> {
        dwell::mean_dwell(&self.0).map_err(err)
    }
    fn __repr__(&self) -> String {
        format!(
            "DwellHistogram(state={}, pairs={}, events={})",
            self.0.state,
            self.0.pairs.len(),
            self.0.total_occurrences()
        )
    }
}

#[pyclass(name = "RateEstimate", module = "blinkfit_py", from_py_object)]
#[derive(Clone)]
struct PyEstimate(blinkfit::RateEstimate);

#[pymethods]
impl PyEstimate {
    #[getter]
    fn tau_hat(&self) -> f64 {
        self.0.tau_hat
    }
    #[getter]
    fn std_err(&self) -> f64 {
        self.0.std_err
    }
    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.as_str()
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }
    #[getter]
    fn rate(&self) -> f64 {
        self.0.rate()
    }
    #[getter]
    fn diagnostics(&self) -> BTreeMap<String, f64> {
        self.0.diagnostics.clone()
    }
    fn __repr__(&self) -> String {
        format!(
            "RateEstimate(method={}, tau_hat={}, std_err={}, converged={})",
            self.0.method, self.0.tau_hat, self.0.std_err, self.0.converged
        )
    }
}

#[pyclass(name = "MfrModel", module = "blinkfit_py", from_py_object)]
#[derive(Clone)]
struct PyMfrModel(mfr::MfrModel);

#[pymethods]
impl PyMfrModel {
    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }
    #[getter]
    fn trained_duration(&self) -> f64 {
        self.0.trained_duration
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(PyMfrModel)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Simulates a two-state trace; durations in seconds.
#[pyfunction]
#[pyo3(signature = (tau_on, tau_off, duration, bin_width=1e-3, noise=true, seed=DEFAULT_SEED))]
fn simulate(tau_on: f64, tau_off: f64, duration: f64, bin_width: f64, noise: bool, seed: u64) -> PyResult<PyTrace> {
    let cfg = TraceConfig::new(bin_width).with_noise(if noise { PhotonNoise::Poisson } else { PhotonNoise::None });
    generate_trace(&EmitterModel::two_state(tau_on, tau_off), duration, &cfg, seed)
        .map(PyTrace)
        .map_err(err)
}

#[pyfunction]
fn auto_threshold(trace: &PyTrace) -> PyResult<f64> {
    dwell::auto_threshold(&trace.0).map_err(err)
}

/// On and off dwell histograms of a trace (auto threshold).
#[pyfunction]
fn histograms(trace: &PyTrace) -> PyResult<(PyHistogram, PyHistogram)> {
    let (on, off) = dwell::histograms_from_trace(&trace.0).map_err(err)?;
    Ok((PyHistogram(on), PyHistogram(off)))
}

#[pyfunction]
#[pyo3(signature = (hist, tau_range=(1e-3, 0.1)))]
fn estimate_lm_py(hist: &PyHistogram, tau_range: (f64, f64)) -> PyEstimate {
    PyEstimate(estimate_lm(&hist.0, tau_range, &LmConfig::default()))
}

/// Trains `(on, off)` models for traces of `duration` seconds.
#[pyfunction]
#[pyo3(signature = (duration, count=mfr::DEFAULT_TRAINING_SETS, tau_range=mfr::DEFAULT_TAU_RANGE, bin_width=1e-3, ridge=mfr::DEFAULT_RIDGE, seed=DEFAULT_SEED))]
fn train_mfr(
    duration: f64,
    count: usize,
    tau_range: (f64, f64),
    bin_width: f64,
    ridge: f64,
    seed: u64,
) -> PyResult<(PyMfrModel, PyMfrModel)> {
    let cfg = mfr::CorpusConfig {
        tau_range,
        count,
        ..mfr::CorpusConfig::new(duration, TraceConfig::new(bin_width))
    };
    let pair = mfr::train_pair(&cfg, ridge, seed).map_err(err)?;
    Ok((PyMfrModel(pair.on), PyMfrModel(pair.off)))
}

#[pyfunction]
fn estimate_mfr(model: &PyMfrModel, hist: &PyHistogram, trace_duration: f64) -> PyEstimate {
    PyEstimate(mfr::estimate_mfr(&model.0, &hist.0, trace_duration))
}

/// Runs the genetic algorithm; `config_json` overrides the defaults.
#[pyfunction]
#[pyo3(signature = (hist, seed=DEFAULT_SEED, config_json=None))]
fn estimate_ga(hist: &PyHistogram, seed: u64, config_json: Option<&str>) -> PyResult<PyEstimate> {
    let cfg: GaConfig = match config_json {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => GaConfig::default(),
    };
    let mut rng = rng_from_seed(seed);
    run_ga(&hist.0, &cfg, &mut rng)
        .map(|o| PyEstimate(o.estimate))
        .map_err(err)
}

/// One benchmark trial of the default 15/45 ms scenario.
#[pyfunction]
#[pyo3(signature = (method, duration, trial, seed=DEFAULT_SEED))]
fn run_trial(method: &str, duration: f64, trial: usize, seed: u64) -> PyResult<(PyEstimate, PyEstimate)> {
    let method: Method = method.parse().map_err(err)?;
    let sc = Scenario {
        base_seed: seed,
        ..Scenario::default()
    };
    let models = if method == Method::Mfr {
        Some(sc.train_mfr(duration).map_err(err)?)
    } else {
        None
    };
    let r = bench::run_trial(&sc, duration, method, trial, models.as_ref());
    Ok((PyEstimate(r.on), PyEstimate(r.off)))
}

#[pymodule]
fn blinkfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyMfrModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(auto_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(histograms, m)?)?;
    m.add("estimate_lm", wrap_pyfunction!(estimate_lm_py, m)?)?;
    m.add_function(wrap_pyfunction!(train_mfr, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mfr, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ga, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    Ok(())
}
