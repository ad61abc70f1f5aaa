//! Python bindings. Results with many fields come back as dicts, built
//! from the same JSON the command line writes.

use interfere::design::{propensity, Block, Design, PropensityRequest};
use interfere::estimators::{self, BandwidthChoice, Sample, SampleRule, VarianceKind};
use interfere::exposure::ExposureSpec;
use interfere::graph::{self, Links};
use interfere::mc::{run_mc as run_mc_core, McConfig};
use interfere::netgen::{self, RadiusRule};
use interfere::outcomes::ModelSpec;
use interfere::{io, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn err(e: Error) -> PyErr {
    match e {
        Error::Input(_) | Error::UnsupportedExposure(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = io::to_json(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Undirected simple graph on nodes `0..n`.
#[pyclass(module = "interfere_py", frozen)]
struct Graph {
    inner: graph::Graph,
}

#[pymethods]
impl Graph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Graph { inner: graph::Graph::from_edges(n, &edges, false).map_err(err)?.0 })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Ok(Graph { inner: graph::Graph::read_edge_list(std::io::BufReader::new(f), false).map_err(err)?.0 })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.inner.neighbors(i).to_vec())
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    /// Largest-component path length, diameter and degree summary.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary())
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.inner.n(), self.inner.edge_count())
    }
}

/// Bernoulli or fixed-count block randomization.
#[pyclass(module = "interfere_py", frozen)]
struct TreatmentDesign {
    inner: Design,
}

#[pymethods]
impl TreatmentDesign {
    #[staticmethod]
    fn bernoulli(n: usize, eligible: Vec<usize>, p: f64) -> PyResult<Self> {
        Ok(TreatmentDesign { inner: Design::bernoulli(n, &eligible, p).map_err(err)? })
    }

    /// `blocks` is a list of `(units, treated_count)`.
    #[staticmethod]
    fn blocks(n: usize, blocks: Vec<(Vec<usize>, usize)>) -> PyResult<Self> {
        let blocks = blocks.into_iter().map(|(units, treated)| Block { units, treated }).collect();
        Ok(TreatmentDesign { inner: Design::blocks(n, blocks).map_err(err)? })
    }

    fn marginal(&self, i: usize) -> f64 {
        self.inner.marginal(i)
    }

    fn sample(&self, seed: u64) -> Vec<u8> {
        self.inner.sample(seed).0
    }
}

#[pyfunction]
fn configuration_model(degrees: Vec<usize>, seed: u64) -> PyResult<Graph> {
    Ok(Graph { inner: netgen::configuration_model(&degrees, seed).map_err(err)?.0 })
}

/// Random geometric graph on the unit square; returns the graph, the node
/// positions and the connection radius.
#[pyfunction]
fn rgg(n: usize, kappa: f64, seed: u64) -> PyResult<(Graph, Vec<(f64, f64)>, f64)> {
    let (g, pl) = netgen::rgg(n, kappa, RadiusRule::Sqrt, seed).map_err(err)?;
    Ok((Graph { inner: g }, pl.positions.iter().map(|p| (p[0], p[1])).collect(), pl.radius))
}

#[pyfunction]
#[pyo3(signature = (graph, treatment, exposure = "any-nbr"))]
fn exposures(graph: &Graph, treatment: Vec<u8>, exposure: &str) -> PyResult<Vec<u32>> {
    let spec: ExposureSpec = exposure.parse().map_err(err)?;
    if treatment.len() != graph.inner.n() {
        return Err(PyValueError::new_err("treatment length does not match the graph"));
    }
    Ok(spec.compute(&treatment, Links::Undirected(&graph.inner)))
}

/// Outcomes under `model` ("lim:a,b,d,g" or "contagion:a,b,d,g").
#[pyfunction]
fn outcomes(graph: &Graph, model: &str, epsilon: Vec<f64>, treatment: Vec<u8>) -> PyResult<Vec<f64>> {
    let spec: ModelSpec = model.parse().map_err(err)?;
    spec.validate().map_err(err)?;
    let n = graph.inner.n();
    if epsilon.len() != n || treatment.len() != n {
        return Err(PyValueError::new_err("epsilon and treatment must have one entry per node"));
    }
    spec.with_epsilon(epsilon).evaluate(&graph.inner, &treatment).map_err(err)
}

/// Returns `(b, regime)`.
#[pyfunction]
#[pyo3(signature = (apl, n, avg_degree, k = 1, literal = false))]
fn bandwidth_rule(apl: f64, n: usize, avg_degree: f64, k: usize, literal: bool) -> PyResult<(usize, String)> {
    let b = estimators::bandwidth_rule(apl, n, avg_degree, k, literal);
    let regime = serde_json::to_value(b.regime).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((b.b, regime.as_str().unwrap_or_default().to_string()))
}

/// IPW contrast with HAC and naive variances. `bandwidth=None` applies the
/// automatic rule.
#[pyfunction]
#[pyo3(signature = (graph, design, outcomes, treatment, exposure = "any-nbr", t = 1, t0 = 0,
                    bandwidth = None, variance = vec!["hac".to_string(), "naive".to_string()],
                    sample = "has-eligible-neighbor"))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    graph: &Graph,
    design: &TreatmentDesign,
    outcomes: Vec<f64>,
    treatment: Vec<u8>,
    exposure: &str,
    t: u32,
    t0: u32,
    bandwidth: Option<usize>,
    variance: Vec<String>,
    sample: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let g = &graph.inner;
    let n = g.n();
    if outcomes.len() != n || treatment.len() != n || design.inner.n() != n {
        return Err(PyValueError::new_err("outcomes, treatment and design must match the graph size"));
    }
    let spec: ExposureSpec = exposure.parse().map_err(err)?;
    let rule: SampleRule = sample.parse().map_err(err)?;
    let kinds: Vec<VarianceKind> = variance.iter().map(|v| v.parse()).collect::<Result<_, _>>().map_err(err)?;
    if kinds.contains(&VarianceKind::As) {
        return Err(PyValueError::new_err("the AS variance is available from the command line only"));
    }
    let links = Links::Undirected(g);
    let table = propensity(&design.inner, &spec, links, PropensityRequest::ClosedForm).map_err(err)?;
    let t_full = spec.compute(&treatment, links);
    let units = rule.select(&design.inner, links);
    let s = Sample::new(units, &outcomes, &t_full, &table);
    let choice = match bandwidth {
        Some(b) => BandwidthChoice::Fixed(b),
        None => BandwidthChoice::Auto { literal: false },
    };
    let report = estimators::estimate(g, &s, t, t0, spec.radius(), choice, &kinds, None).map_err(err)?;
    to_py(py, &report)
}

/// Runs a Monte Carlo experiment described by a JSON config string.
#[pyfunction]
fn run_mc(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg: McConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| run_mc_core(&cfg)).map_err(err)?;
    Ok(to_py(py, &report)?.unbind())
}

#[pymodule]
fn interfere_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<TreatmentDesign>()?;
    m.add_function(wrap_pyfunction!(configuration_model, m)?)?;
    m.add_function(wrap_pyfunction!(rgg, m)?)?;
    m.add_function(wrap_pyfunction!(exposures, m)?)?;
    m.add_function(wrap_pyfunction!(outcomes, m)?)?;
    m.add_function(wrap_pyfunction!(bandwidth_rule, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_mc, m)?)?;
    Ok(())
}
