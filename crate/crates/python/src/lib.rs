//! Python bindings: parsing, judging, scoring and manifest checks.

use std::path::PathBuf;

use mapforge::agent_xml::{self, Plan, PlanSet};
use mapforge::corpus::{self, TestCase};
use mapforge::emitter;
use mapforge::metrics::{self, ReportFormat};
use mapforge::orchestrator;
use mapforge::run_dir::RunDir;
use mapforge::sandbox::{ExecutionLimits, JudgeCase, Sandbox, TestScope, DEFAULT_OUTPUT_LIMIT_KB};
use mapforge::AgentRole;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn role(name: &str) -> PyResult<AgentRole> {
    name.parse().map_err(|e: mapforge::role::UnknownRole| PyValueError::new_err(e.to_string()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through JSON so Python receives plain dicts and lists.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// `100 * passes / total`, rounded half-up to two decimals.
#[pyfunction]
fn accuracy(passes: u64, total: u64) -> PyResult<f64> {
    metrics::accuracy(passes, total).map_err(value_err)
}

#[pyfunction]
fn format_tokens(n: u64) -> String {
    metrics::format_tokens(n)
}

/// Strictly parses one agent reply. Returns the typed value on success or
/// raises `ValueError` listing the classified failures.
#[pyfunction]
#[pyo3(signature = (role_name, raw, language = "python"))]
fn parse_response<'py>(py: Python<'py>, role_name: &str, raw: &str, language: &str) -> PyResult<Bound<'py, PyAny>> {
    match agent_xml::parse_for_role(role(role_name)?, raw, language) {
        Ok(v) => to_py(py, &v),
        Err(f) => Err(PyValueError::new_err(
            f.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        )),
    }
}

/// Failure kinds of one reply as `(kind, detail)` pairs; empty when valid.
#[pyfunction]
#[pyo3(signature = (role_name, raw, language = "python"))]
fn classify(role_name: &str, raw: &str, language: &str) -> PyResult<Vec<(String, String)>> {
    Ok(match agent_xml::parse_for_role(role(role_name)?, raw, language) {
        Ok(_) => Vec::new(),
        Err(f) => f.into_iter().map(|f| (format!("{:?}", f.kind), f.detail)).collect(),
    })
}

/// Best-effort recovery of a retrieval or planning reply.
#[pyfunction]
fn recover<'py>(py: Python<'py>, role_name: &str, raw: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
    let r = role(role_name)?;
    let schema = agent_xml::DocumentSchema::for_role(r)
        .ok_or_else(|| PyValueError::new_err(format!("{r} replies are not XML")))?;
    agent_xml::lenient_recover(raw, schema).map(|v| to_py(py, &v)).transpose()
}

/// Visiting order of `(steps, confidence)` plans.
#[pyfunction]
fn order_plans(plans: Vec<(String, u8)>) -> Vec<(String, u8)> {
    let set = PlanSet {
        plans: plans
            .into_iter()
            .map(|(steps, confidence)| Plan { steps, confidence })
            .collect(),
    };
    orchestrator::order_plans(&set)
        .into_iter()
        .map(|p| (p.steps, p.confidence))
        .collect()
}

/// Runs `source` on `(input, expected)` pairs and returns the report.
#[pyfunction]
#[pyo3(signature = (source, language, tests, time_limit_s = 5.0, memory_limit_mb = 512))]
fn judge<'py>(
    py: Python<'py>,
    source: &str,
    language: &str,
    tests: Vec<(String, String)>,
    time_limit_s: f64,
    memory_limit_mb: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cases: Vec<JudgeCase> = tests
        .into_iter()
        .map(|(input, expected)| JudgeCase {
            scope: TestScope::Hidden,
            case: TestCase::new(input, expected),
        })
        .collect();
    let limits = ExecutionLimits {
        time_limit_s,
        memory_limit_mb,
        output_limit_kb: DEFAULT_OUTPUT_LIMIT_KB,
    };
    let report = py
        .detach(|| Sandbox::default().run_tests(source, language, &cases, &limits))
        .map_err(value_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn load_benchmark<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let b = corpus::load_benchmark(&path).map_err(value_err)?;
    to_py(py, &b)
}

/// Renders the report of a finished run directory.
#[pyfunction]
#[pyo3(signature = (run_dir, format = "table"))]
fn report(run_dir: PathBuf, format: &str) -> PyResult<String> {
    let format: ReportFormat = format.parse().map_err(PyValueError::new_err)?;
    let r = RunDir::open(&run_dir)
        .and_then(|d| d.report())
        .map_err(|e| PyOSError::new_err(e.to_string()))?;
    Ok(metrics::render_report(&r, format))
}

/// True when the manifest's corpus digest matches the file on disk.
#[pyfunction]
fn verify_manifest(path: PathBuf) -> PyResult<bool> {
    Ok(emitter::verify_manifest(&path).map_err(value_err)?.ok())
}

#[pyfunction]
fn schema_reference() -> String {
    agent_xml::reference_document()
}

#[pymodule]
#[pyo3(name = "mapforge")]
fn mapforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(format_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    m.add_function(wrap_pyfunction!(order_plans, m)?)?;
    m.add_function(wrap_pyfunction!(judge, m)?)?;
    m.add_function(wrap_pyfunction!(load_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(verify_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(schema_reference, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_order_matches_core() {
        let got = order_plans(vec![("a".into(), 10), ("b".into(), 90), ("c".into(), 90)]);
        assert_eq!(got.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), ["b", "c", "a"]);
    }

    #[test]
    fn classify_reports_kinds() {
        let kinds = classify("coding", "print(1)", "python").unwrap();
        assert_eq!(kinds, [("NoCodeBlock".to_string(), String::new())]);
        assert!(classify("nobody", "", "python").is_err());
    }
}
