//! Python bindings for the GDAS search library: tensors with reverse-mode
//! autodiff, the Gumbel-softmax sampler, sub-graph combinatorics, cell
//! derivation, and the full search/oracle pipelines driven by TOML configs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gdas_core::config::RunConfig;
use gdas_core::derive::{derive_cell, export_cell, full_omega, ExportFormat};
use gdas_core::engine::{metrics_csv, run_search};
use gdas_core::ops::CandidateOpKind;
use gdas_core::oracle::{enumerate_cells, rank_all, ranking_csv, validate_marginals};
use gdas_core::rng::subsystem_rng;
use gdas_core::sampler;
use gdas_core::space::{self, CellType, SearchSpaceSpec};

fn err(e: gdas_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_space(num_nodes: usize, candidates: Vec<String>, retained: usize) -> PyResult<SearchSpaceSpec> {
    let kinds: Vec<CandidateOpKind> = candidates
        .iter()
        .map(|n| CandidateOpKind::parse(n))
        .collect::<gdas_core::Result<_>>()
        .map_err(err)?;
    Ok(SearchSpaceSpec::new(num_nodes, kinds, retained))
}

/// A scalar-or-dense tensor with reverse-mode automatic differentiation.
#[pyclass(name = "Tensor", unsendable)]
#[derive(Clone)]
struct PyTensor {
    inner: gdas_core::Tensor,
}

#[pymethods]
impl PyTensor {
    /// Create a differentiable leaf tensor from flat data and a shape.
    #[new]
    fn new(data: Vec<f64>, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: gdas_core::Tensor::param(data, shape).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    fn item(&self) -> f64 {
        self.inner.item()
    }

    fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad()
    }

    fn zero_grad(&self) {
        self.inner.zero_grad();
    }

    fn backward(&self) -> PyResult<()> {
        self.inner.backward().map_err(err)
    }

    fn add(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.add(&other.inner).map_err(err)? })
    }

    fn sub(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.sub(&other.inner).map_err(err)? })
    }

    fn mul(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.mul(&other.inner).map_err(err)? })
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.matmul(&other.inner).map_err(err)? })
    }

    fn relu(&self) -> PyTensor {
        PyTensor { inner: self.inner.relu() }
    }

    fn softmax(&self) -> PyTensor {
        PyTensor { inner: self.inner.softmax() }
    }

    fn sum(&self) -> PyTensor {
        PyTensor { inner: self.inner.sum() }
    }

    fn mean(&self) -> PyTensor {
        PyTensor { inner: self.inner.mean() }
    }
}

/// Standard-Gumbel noise vector of length `k`, seeded deterministically.
#[pyfunction]
fn sample_gumbel(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = subsystem_rng(seed, "python-gumbel");
    sampler::sample_gumbel(k, &mut rng)
}

/// Index of the Gumbel-Max winner for the given logits and noise.
#[pyfunction]
fn gumbel_argmax(logits: Vec<f64>, noise: Vec<f64>) -> usize {
    sampler::gumbel_argmax(&logits, &noise)
}

/// Relaxed (Gumbel-softmax) sample at temperature `tau`.
#[pyfunction]
fn gumbel_softmax(logits: Vec<f64>, noise: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    sampler::gumbel_softmax(&logits, &noise, tau).map_err(err)
}

/// softmax(A): the categorical distribution an edge samples from.
#[pyfunction]
fn edge_probabilities(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    sampler::edge_probabilities(&logits).map_err(err)
}

/// Chi-square goodness-of-fit of empirical Gumbel-Max frequencies
/// against softmax(A); returns (statistic, p_value).
#[pyfunction]
fn marginal_check(logits: Vec<f64>, draws: u64, seed: u64) -> PyResult<(f64, f64)> {
    let report = validate_marginals(&logits, draws, seed).map_err(err)?;
    Ok((report.statistic, report.p_value))
}

/// Number of distinct derivable sub-graphs for a cell search space.
#[pyfunction]
fn count_subgraphs(num_nodes: usize, candidates: Vec<String>, retained: usize) -> PyResult<u128> {
    let spec = parse_space(num_nodes, candidates, retained)?;
    space::count_subgraphs(&spec).map_err(err)
}

/// Derive the discrete cell from per-edge logits; returns the cell as a
/// JSON string. `logits[e]` orders edges as (node 2|0), (node 2|1),
/// (node 3|0), ... within the cell DAG.
#[pyfunction]
#[pyo3(signature = (logits, num_nodes, candidates, retained, exclude_zeroize = false))]
fn derive_cell_json(
    logits: Vec<Vec<f64>>,
    num_nodes: usize,
    candidates: Vec<String>,
    retained: usize,
    exclude_zeroize: bool,
) -> PyResult<String> {
    let spec = parse_space(num_nodes, candidates, retained)?;
    let omega: Vec<usize> = if exclude_zeroize {
        spec.candidates
            .iter()
            .enumerate()
            .filter(|(_, k)| **k != CandidateOpKind::Zeroize)
            .map(|(i, _)| i)
            .collect()
    } else {
        full_omega(spec.k())
    };
    let cell = derive_cell(&logits, &spec, &omega, CellType::Normal).map_err(err)?;
    export_cell(&cell, ExportFormat::Json).map_err(err)
}

/// Run the full alternating search from a TOML config string; returns
/// (metrics_csv, final_arch_params_json).
#[pyfunction]
fn search(config_toml: &str) -> PyResult<(String, String)> {
    let cfg = RunConfig::from_toml(config_toml).map_err(err)?;
    let outcome = run_search(
        &cfg.space_spec().map_err(err)?,
        &cfg.plan(),
        &cfg.search_settings().map_err(err)?,
        &cfg.dataset().map_err(err)?,
    )
    .map_err(err)?;
    let snapshot = serde_json::to_string_pretty(&outcome.arch.snapshot())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((metrics_csv(&outcome.metrics), snapshot))
}

/// Enumerate every derivable cell under the config's cap, train each
/// under the oracle budget, and return the ranking as CSV.
#[pyfunction]
fn oracle(config_toml: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml(config_toml).map_err(err)?;
    let spec = cfg.space_spec().map_err(err)?;
    let cells = enumerate_cells(&spec, cfg.oracle.cap as u128).map_err(err)?;
    let dataset = cfg.dataset().map_err(err)?;
    let (train, val) = dataset.split(cfg.search.train_fraction, cfg.seed).map_err(err)?;
    let ranking = rank_all(&cells, &cfg.plan(), &train, &val, &cfg.oracle_budget()).map_err(err)?;
    ranking_csv(&ranking).map_err(err)
}

#[pymodule]
fn gdas_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(sample_gumbel, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_argmax, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(edge_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_check, m)?)?;
    m.add_function(wrap_pyfunction!(count_subgraphs, m)?)?;
    m.add_function(wrap_pyfunction!(derive_cell_json, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}
