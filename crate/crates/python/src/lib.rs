//! Python bindings. Structured results cross as JSON strings; decode them
//! with `json.loads`.

use std::collections::BTreeMap;

use lowpass_fedrec::config::ExperimentConfig;
use lowpass_fedrec::error::Error;
use lowpass_fedrec::experiment::{client_spectra, prepare_data, run};
use lowpass_fedrec::graph::BipartiteGraph;
use lowpass_fedrec::spectral::graph_spectrum;
use lowpass_fedrec::theory::TheoryBattery;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::NoConvergence { .. } | Error::NumericalBlowUp(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn config_from(text: Option<&str>, overrides: Option<BTreeMap<String, String>>) -> PyResult<ExperimentConfig> {
    let base = match text {
        Some(t) => ExperimentConfig::parse(t).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    base.with_overrides(overrides.unwrap_or_default()).map_err(to_py)
}

/// Default configuration in `key = value` form.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_text()
}

/// Resolved configuration after applying `overrides` to `config` (or the defaults).
#[pyfunction]
#[pyo3(signature = (config=None, overrides=None))]
fn resolve_config(config: Option<&str>, overrides: Option<BTreeMap<String, String>>) -> PyResult<String> {
    Ok(config_from(config, overrides)?.to_text())
}

/// Trains one federation in memory and returns the run outcome as JSON.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=None))]
fn train(py: Python<'_>, config: Option<&str>, overrides: Option<BTreeMap<String, String>>) -> PyResult<String> {
    let cfg = config_from(config, overrides)?;
    let outcome = py
        .detach(|| {
            let data = prepare_data(&cfg)?;
            let spectra = client_spectra(&data, cfg.phi, cfg.seed)?;
            run(&cfg, &data, &spectra, None)
        })
        .map_err(to_py)?;
    json(&outcome)
}

/// Smallest `phi` eigenvalues of the normalized Laplacian of a user-item graph.
#[pyfunction]
#[pyo3(signature = (users, items, edges, phi, seed=0))]
fn laplacian_eigenvalues(users: usize, items: usize, edges: Vec<(usize, usize)>, phi: usize, seed: u64) -> PyResult<Vec<f64>> {
    let g = BipartiteGraph::new(users, items, edges).map_err(to_py)?;
    Ok(graph_spectrum(&g, phi, seed).map_err(to_py)?.eigenvalues().to_vec())
}

/// Projects node features (one row per node, users first) onto the `phi`
/// smoothest eigenvectors.
#[pyfunction]
#[pyo3(signature = (users, items, edges, phi, features, seed=0))]
fn low_pass(users: usize, items: usize, edges: Vec<(usize, usize)>, phi: usize, features: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let g = BipartiteGraph::new(users, items, edges).map_err(to_py)?;
    let cols = features.first().map_or(0, Vec::len);
    if features.len() != g.num_nodes() || features.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("features must be {} rows of equal length", g.num_nodes())));
    }
    let z = DMatrix::from_fn(features.len(), cols, |r, c| features[r][c]);
    let out = graph_spectrum(&g, phi, seed).and_then(|s| s.lcf(&z)).map_err(to_py)?;
    Ok(out.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Runs the bound-check battery and returns `(table, verdicts_json)`.
#[pyfunction]
#[pyo3(signature = (seed=0, samples=20))]
fn theory(py: Python<'_>, seed: u64, samples: usize) -> PyResult<(String, String)> {
    let report = py.detach(|| TheoryBattery::new(seed, samples).run()).map_err(to_py)?;
    Ok((report.table(), json(&report.verdicts())?))
}

#[pyfunction]
fn recall_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    lowpass_fedrec::eval::recall_at_k(&ranked, &relevant, k)
}

#[pyfunction]
fn ndcg_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    lowpass_fedrec::eval::ndcg_at_k(&ranked, &relevant, k)
}

#[pyfunction]
fn jaccard(a: Vec<usize>, b: Vec<usize>) -> f64 {
    lowpass_fedrec::eval::jaccard(&a, &b)
}

#[pymodule]
fn lowpass_fedrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(low_pass, m)?)?;
    m.add_function(wrap_pyfunction!(theory, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    Ok(())
}
