//! Python bindings for `detect_lab`. Structured results come back as plain
//! dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};
use serde::Serialize;
use serde_json::Value;

use detect_lab::graph_sim::{self, PerturbMode, PerturbationBudget};
use detect_lab::harness::{self, RunConfig, ThresholdQuery};
use detect_lab::info_metrics::{self, BernoulliShift, PoissonShift};
use detect_lab::sequential::{self, CalibrationConfig, ScanMode, TemporalDetectorConfig};
use detect_lab::spectral::{self, SpectralMethod, StaticDetectorConfig};
use detect_lab::temporal_sim;
use detect_lab::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Config(_) | Error::Parse(_) | Error::Infeasible(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(x) => {
            if let Some(i) = x.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = x.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                x.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyfunction]
fn chi_square_bernoulli(p: f64, delta: f64) -> PyResult<f64> {
    Ok(info_metrics::chi_square_bernoulli(BernoulliShift::new(p, delta).map_err(err)?))
}

#[pyfunction]
fn poisson_kl_rate(mu: f64, delta: f64) -> PyResult<f64> {
    Ok(info_metrics::poisson_kl_rate(PoissonShift::new(mu, delta).map_err(err)?))
}

/// Returns `(value, clamped)`.
#[pyfunction]
fn delta_min(n: u64, p: f64, k: u64) -> PyResult<(f64, bool)> {
    let d = info_metrics::delta_min(n, p, k).map_err(err)?;
    Ok((d.value, d.clamped))
}

#[pyfunction]
fn required_horizon(n: u64, info_rate: f64) -> PyResult<f64> {
    info_metrics::required_horizon(n, info_rate).map_err(err)
}

#[pyfunction]
fn expected_delay(alpha: f64, info_rate: f64) -> PyResult<f64> {
    info_metrics::expected_delay(alpha, info_rate).map_err(err)
}

#[pyfunction]
fn mixture_chi_square<'py>(py: Python<'py>, n: u64, k: u64, chi2_edge: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &info_metrics::mixture_chi_square(n, k, chi2_edge).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (n, p=None, k=None, delta=None, info_rate=None, mu=None, delta_rate=None, horizon=None, alpha=None))]
#[allow(clippy::too_many_arguments)]
fn threshold_report<'py>(
    py: Python<'py>,
    n: u64,
    p: Option<f64>,
    k: Option<u64>,
    delta: Option<f64>,
    info_rate: Option<f64>,
    mu: Option<f64>,
    delta_rate: Option<f64>,
    horizon: Option<f64>,
    alpha: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let q = ThresholdQuery { n, p, k, delta, info_rate, mu, delta_rate, horizon, alpha };
    to_py(py, &harness::threshold_report(&q).map_err(err)?)
}

/// Undirected simple graph, optionally with a planted vertex set.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: graph_sim::Graph,
    planted: Vec<usize>,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (n, edges, planted=None))]
    fn new(n: usize, edges: Vec<(usize, usize)>, planted: Option<Vec<usize>>) -> PyResult<Self> {
        Ok(Self { inner: graph_sim::Graph::from_edges(n, edges).map_err(err)?, planted: planted.unwrap_or_default() })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn planted(&self) -> Vec<usize> {
        self.planted.clone()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees()
    }

    fn internal_edge_count(&self, set: Vec<usize>) -> usize {
        self.inner.internal_edge_count(&set)
    }

    /// Perturbed copy; `mode` is one of add, drop, rewire.
    #[pyo3(signature = (epsilon, mode="rewire", seed=0))]
    fn perturb(&self, epsilon: f64, mode: &str, seed: u64) -> PyResult<Self> {
        let mode: PerturbMode = parse(mode)?;
        let g = graph_sim::perturb(&self.inner, &PerturbationBudget::new(epsilon, mode, seed)).map_err(err)?;
        Ok(Self { inner: g, planted: self.planted.clone() })
    }

    fn to_text(&self) -> String {
        let planted = (!self.planted.is_empty()).then_some(self.planted.as_slice());
        graph_sim::format_graph(&self.inner, planted)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let f = graph_sim::read_graph(text.as_bytes()).map_err(err)?;
        Ok(Self { inner: f.graph, planted: f.planted.unwrap_or_default() })
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, m={}, planted={})", self.inner.n(), self.inner.m(), self.planted.len())
    }
}

#[pyfunction]
#[pyo3(signature = (n, p, seed=0))]
fn generate_er(n: usize, p: f64, seed: u64) -> PyResult<PyGraph> {
    Ok(PyGraph { inner: graph_sim::generate_er(n, p, seed).map_err(err)?, planted: Vec::new() })
}

#[pyfunction]
#[pyo3(signature = (n, p, delta, k, seed=0))]
fn generate_planted(n: usize, p: f64, delta: f64, k: usize, seed: u64) -> PyResult<PyGraph> {
    let inst = graph_sim::generate_planted(n, p, delta, k, seed).map_err(err)?;
    Ok(PyGraph { inner: inst.graph, planted: inst.planted })
}

fn static_config(method: &str, prune: bool) -> PyResult<StaticDetectorConfig> {
    let method: SpectralMethod = parse(method)?;
    Ok(StaticDetectorConfig { method, prune, ..Default::default() })
}

/// Null threshold for the spectral statistic at level `alpha`.
#[pyfunction]
#[pyo3(signature = (n, p, k, alpha=0.05, replicates=200, seed=0, method="nb", prune=true))]
#[allow(clippy::too_many_arguments)]
fn calibrate_static(n: usize, p: f64, k: usize, alpha: f64, replicates: usize, seed: u64, method: &str, prune: bool) -> PyResult<f64> {
    let cfg = static_config(method, prune)?;
    Ok(spectral::calibrate_null(n, p, k, alpha, replicates, seed, &cfg).map_err(err)?.threshold)
}

#[pyfunction]
#[pyo3(signature = (graph, k, threshold, method="nb", prune=true, seed=0))]
fn detect_static<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    k: usize,
    threshold: f64,
    method: &str,
    prune: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = static_config(method, prune)?;
    to_py(py, &spectral::detect_static(&graph.inner, k, threshold, &cfg, seed).map_err(err)?)
}

/// Timestamped events on ordered vertex pairs.
#[pyclass(name = "EventStream", frozen)]
struct PyEventStream {
    inner: temporal_sim::EventStream,
}

#[pymethods]
impl PyEventStream {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[getter]
    fn change_time(&self) -> Option<f64> {
        self.inner.change_time
    }

    #[getter]
    fn planted(&self) -> Vec<usize> {
        self.inner.planted.clone()
    }

    fn total_events(&self) -> usize {
        self.inner.total_events()
    }

    fn pair_events(&self, i: usize, j: usize) -> Vec<f64> {
        self.inner.pair_events(i, j).to_vec()
    }

    #[pyo3(signature = (epsilon, seed=0))]
    fn thinned(&self, epsilon: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.thinned(epsilon, seed).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("EventStream(n={}, horizon={}, events={})", self.inner.n, self.inner.horizon, self.inner.total_events())
    }
}

#[pyfunction]
#[pyo3(signature = (n, mu, delta, k, tau, horizon, seed=0))]
fn simulate_poisson_network(n: usize, mu: f64, delta: f64, k: usize, tau: f64, horizon: f64, seed: u64) -> PyResult<PyEventStream> {
    let inner = temporal_sim::simulate_poisson_network(n, mu, delta, k, tau, horizon, seed).map_err(err)?;
    Ok(PyEventStream { inner })
}

#[pyfunction]
#[pyo3(signature = (increments, window=None))]
fn cusum_path(increments: Vec<f64>, window: Option<usize>) -> PyResult<Vec<f64>> {
    sequential::cusum_path(&increments, window).map_err(err)
}

/// CUSUM threshold for a Poisson lift at the given mean run length (bins).
#[pyfunction]
#[pyo3(signature = (target_arl, mu=1.0, delta=1.0, h=1.0, n=2, k=2, mode="oracle", replicates=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn calibrate_arl<'py>(
    py: Python<'py>,
    target_arl: f64,
    mu: f64,
    delta: f64,
    h: f64,
    n: usize,
    k: usize,
    mode: &str,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mode: ScanMode = parse(mode)?;
    let model = sequential::LlrModel::Poisson { mu, delta };
    let mut cfg = CalibrationConfig::new(model, h, target_arl, mode, n, k, seed);
    cfg.replicates = replicates;
    to_py(py, &sequential::calibrate_arl(&cfg).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (stream, mu, delta, threshold, h=1.0, k=None, mode="oracle", window=None))]
#[allow(clippy::too_many_arguments)]
fn detect_temporal<'py>(
    py: Python<'py>,
    stream: &PyEventStream,
    mu: f64,
    delta: f64,
    threshold: f64,
    h: f64,
    k: Option<usize>,
    mode: &str,
    window: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let k = k.unwrap_or(stream.inner.planted.len());
    let mut cfg = TemporalDetectorConfig::poisson(mu, delta, k, threshold);
    cfg.h = h;
    cfg.mode = parse(mode)?;
    cfg.window = window;
    to_py(py, &sequential::detect_temporal(&stream.inner, &cfg).map_err(err)?)
}

/// Worked example; `config` is optional run-configuration text.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn case_study<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match config {
        Some(text) => RunConfig::parse(text).map_err(err)?,
        None => RunConfig::default(),
    };
    to_py(py, &harness::case_study(&cfg).map_err(err)?)
}

#[pymodule]
fn detect_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyEventStream>()?;
    m.add_function(wrap_pyfunction!(chi_square_bernoulli, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_kl_rate, m)?)?;
    m.add_function(wrap_pyfunction!(delta_min, m)?)?;
    m.add_function(wrap_pyfunction!(required_horizon, m)?)?;
    m.add_function(wrap_pyfunction!(expected_delay, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_chi_square, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_report, m)?)?;
    m.add_function(wrap_pyfunction!(generate_er, m)?)?;
    m.add_function(wrap_pyfunction!(generate_planted, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_static, m)?)?;
    m.add_function(wrap_pyfunction!(detect_static, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_poisson_network, m)?)?;
    m.add_function(wrap_pyfunction!(cusum_path, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_arl, m)?)?;
    m.add_function(wrap_pyfunction!(detect_temporal, m)?)?;
    m.add_function(wrap_pyfunction!(case_study, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
