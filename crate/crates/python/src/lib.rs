//! Python bindings. Documents cross the boundary as JSON text.

use std::sync::Arc;

use dpra_core::model::{validate_model, CompiledModel, SystemModel};
use dpra_core::planner::PlanFile;
use dpra_core::risk::{self, AcceptanceCriteria, ComparisonCriterion, RiskReport};
use dpra_core::scheduler::{self, ExplorationConfig, ExplorationResult};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| err(format!("{what}: {e}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Diagnostics of a model document. Raises ValueError on malformed JSON.
#[pyfunction]
fn validate(model: &str) -> PyResult<Vec<String>> {
    let m = SystemModel::from_json_unchecked(model).map_err(err)?;
    Ok(validate_model(&m).iter().map(|d| d.to_string()).collect())
}

/// Fills in the scenarios of a plan document from its FSM.
#[pyfunction]
#[pyo3(signature = (plan, max_len = 8))]
fn generate_plan(plan: &str, max_len: usize) -> PyResult<String> {
    let mut p = PlanFile::parse(plan).map_err(err)?;
    p.regenerate(max_len).map_err(err)?;
    Ok(p.to_json())
}

/// Runs an exploration and returns the result document.
#[pyfunction]
#[pyo3(signature = (model, plan = None, config = None))]
fn explore(py: Python<'_>, model: &str, plan: Option<&str>, config: Option<&str>) -> PyResult<String> {
    let m = dpra_core::model::parse_model(model).map_err(err)?;
    let compiled = Arc::new(CompiledModel::new(&m).map_err(err)?);
    let plan = plan.map(PlanFile::parse).transpose().map_err(err)?;
    let cfg: ExplorationConfig = match config {
        Some(c) => from_json("config", c)?,
        None => ExplorationConfig::default(),
    };
    let r = py.detach(|| scheduler::explore(&compiled, plan.as_ref(), &cfg)).map_err(err)?;
    Ok(to_json(&r))
}

/// Risk report of a result document.
#[pyfunction]
#[pyo3(signature = (result, top_k = 5))]
fn assess(result: &str, top_k: usize) -> PyResult<String> {
    let r: ExplorationResult = from_json("result", result)?;
    Ok(to_json(&risk::assess(&r, top_k)))
}

/// Returns `(overall verdict, acceptance document)`.
#[pyfunction]
fn check_acceptance(report: &str, criteria: &str) -> PyResult<(String, String)> {
    let rep: RiskReport = from_json("report", report)?;
    let crit = AcceptanceCriteria::parse(criteria).map_err(err)?;
    let acc = risk::check_acceptance(&rep, &crit).map_err(err)?;
    Ok((acc.overall().as_str().to_string(), to_json(&acc)))
}

/// Compares `(name, report)` pairs and returns `(verdict line, comparison)`.
#[pyfunction]
#[pyo3(signature = (alternatives, class_name, secondary = Vec::new()))]
fn compare(alternatives: Vec<(String, String)>, class_name: &str, secondary: Vec<String>) -> PyResult<(String, String)> {
    let alts = alternatives
        .iter()
        .map(|(name, rep)| Ok((name.clone(), from_json::<RiskReport>(name, rep)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let criterion = ComparisonCriterion { class: class_name.to_string(), secondary };
    let cmp = risk::compare_designs(&alts, &criterion).map_err(err)?;
    Ok((cmp.verdict_line(), to_json(&cmp)))
}

#[pymodule]
fn dpra(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_plan, m)?)?;
    m.add_function(wrap_pyfunction!(explore, m)?)?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(check_acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
