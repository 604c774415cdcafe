//! Converters from public benchmark layouts into the canonical format.
//!
//! Each adapter reads a line-delimited JSON export of the benchmark:
//!
//! * `xcodeeval`: `src_uid`, `description`, `input_spec`, `output_spec`,
//!   optional `notes`, `sample_inputs`/`sample_outputs` arrays, `time_limit`
//!   ("2 seconds"), `memory_limit` ("256 megabytes") and `hidden_unit_tests`
//!   (array or JSON string of `{input, output: [..]}`).
//! * `apps`: `problem_id`, `question`, `input_output` (object or JSON string
//!   with `inputs`/`outputs`). APPS has no separate sample I/O, so the first
//!   test doubles as the sample.
//! * `codecontests`: `name`, `description`, `public_tests`, `private_tests`,
//!   optional `generated_tests` (each `{input: [..], output: [..]}`),
//!   `time_limit` (`{seconds, nanos}`) and `memory_limit_bytes`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use super::{
    parse_benchmark, to_canonical_lines, BenchmarkManifest, CorpusError, Problem, TestCase,
    DEFAULT_MEMORY_LIMIT_MB, DEFAULT_TIME_LIMIT_S,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adapter {
    XCodeEval,
    Apps,
    CodeContests,
}

impl Adapter {
    pub fn name(self) -> &'static str {
        match self {
            Adapter::XCodeEval => "xcodeeval",
            Adapter::Apps => "apps",
            Adapter::CodeContests => "codecontests",
        }
    }
}

impl FromStr for Adapter {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xcodeeval" => Ok(Adapter::XCodeEval),
            "apps" => Ok(Adapter::Apps),
            "codecontests" | "code_contests" => Ok(Adapter::CodeContests),
            other => Err(CorpusError::Import(format!(
                "unknown adapter `{other}` (expected xcodeeval, apps or codecontests)"
            ))),
        }
    }
}

/// Converts `src` with `adapter` and writes the canonical file to `dest`.
pub fn import_file(
    adapter: Adapter,
    src: &Path,
    dest: &Path,
    language: &str,
) -> Result<BenchmarkManifest, CorpusError> {
    let text = fs::read_to_string(src).map_err(|source| CorpusError::Io {
        path: src.to_path_buf(),
        source,
    })?;
    let problems = convert(adapter, &text, language)?;
    let canonical = to_canonical_lines(&problems);
    let name = dest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| adapter.name().to_string());
    // Re-parse so the output obeys exactly the rules `load_benchmark` applies.
    let manifest = parse_benchmark(&name, &canonical)?;
    crate::fsutil::write_atomic(dest, canonical.as_bytes()).map_err(|source| CorpusError::Io {
        path: dest.to_path_buf(),
        source,
    })?;
    Ok(manifest)
}

pub fn convert(adapter: Adapter, text: &str, language: &str) -> Result<Vec<Problem>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let value: Value = serde_json::from_str(line)
            .map_err(|e| CorpusError::Import(format!("line {line_no}: {e}")))?;
        let problem = match adapter {
            Adapter::XCodeEval => from_xcodeeval(&value, language),
            Adapter::Apps => from_apps(&value, language),
            Adapter::CodeContests => from_codecontests(&value, language),
        }
        .map_err(|e| CorpusError::Import(format!("line {line_no}: {e}")))?;
        out.push(problem);
    }
    Ok(out)
}

fn str_field<'a>(v: &'a Value, key: &str) -> Result<&'a str, String> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string field `{key}`"))
}

fn id_field(v: &Value, key: &str) -> Result<String, String> {
    match v.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(format!("missing id field `{key}`")),
    }
}

fn str_array(v: &Value) -> Vec<String> {
    v.as_array()
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

/// Accepts either a JSON value or a string holding JSON.
fn embedded_json(v: &Value) -> Result<Value, String> {
    match v {
        Value::String(s) if s.trim().is_empty() => Ok(Value::Null),
        Value::String(s) => serde_json::from_str(s).map_err(|e| format!("embedded JSON: {e}")),
        other => Ok(other.clone()),
    }
}

fn zip_tests(inputs: &[String], outputs: &[String]) -> Result<Vec<TestCase>, String> {
    if inputs.len() != outputs.len() {
        return Err(format!(
            "{} inputs but {} outputs",
            inputs.len(),
            outputs.len()
        ));
    }
    Ok(inputs
        .iter()
        .zip(outputs)
        .map(|(i, o)| TestCase::new(i.clone(), o.clone()))
        .collect())
}

/// Parses the leading number of strings such as "2 seconds" or "256 megabytes".
fn leading_number(s: &str) -> Option<f64> {
    s.split_whitespace().next()?.parse().ok()
}

fn from_xcodeeval(v: &Value, language: &str) -> Result<Problem, String> {
    let id = id_field(v, "src_uid")?;
    let mut statement = str_field(v, "description")?.trim().to_string();
    for (title, key) in [("Input", "input_spec"), ("Output", "output_spec"), ("Note", "notes")] {
        if let Some(section) = v.get(key).and_then(Value::as_str) {
            if !section.trim().is_empty() {
                statement.push_str(&format!("\n\n{title}\n{}", section.trim()));
            }
        }
    }
    let sample_tests = zip_tests(
        &str_array(v.get("sample_inputs").unwrap_or(&Value::Null)),
        &str_array(v.get("sample_outputs").unwrap_or(&Value::Null)),
    )?;
    let mut hidden_tests = Vec::new();
    if let Some(raw) = v.get("hidden_unit_tests") {
        let tests = embedded_json(raw)?;
        for t in tests.as_array().into_iter().flatten() {
            let input = str_field(t, "input")?.to_string();
            let output = match t.get("output") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Array(a)) => a
                    .first()
                    .and_then(Value::as_str)
                    .ok_or("hidden test with empty output list")?
                    .to_string(),
                _ => return Err("hidden test without output".into()),
            };
            hidden_tests.push(TestCase::new(input, output));
        }
    }
    let time_limit = v
        .get("time_limit")
        .and_then(Value::as_str)
        .and_then(leading_number)
        .unwrap_or(DEFAULT_TIME_LIMIT_S);
    let memory_limit = v
        .get("memory_limit")
        .and_then(Value::as_str)
        .and_then(leading_number)
        .map(|m| m as u64)
        .unwrap_or(DEFAULT_MEMORY_LIMIT_MB);
    Ok(Problem {
        id,
        statement,
        sample_tests,
        hidden_tests,
        language: language.to_string(),
        source: "xcodeeval".into(),
        time_limit,
        memory_limit,
    })
}

fn from_apps(v: &Value, language: &str) -> Result<Problem, String> {
    let id = id_field(v, "problem_id")?;
    let statement = str_field(v, "question")?.trim().to_string();
    let io = embedded_json(v.get("input_output").unwrap_or(&Value::Null))?;
    let inputs = str_array(io.get("inputs").unwrap_or(&Value::Null));
    let outputs = str_array(io.get("outputs").unwrap_or(&Value::Null));
    let hidden_tests = zip_tests(&inputs, &outputs)?;
    let sample_tests = hidden_tests.iter().take(1).cloned().collect();
    Ok(Problem {
        id,
        statement,
        sample_tests,
        hidden_tests,
        language: language.to_string(),
        source: "apps".into(),
        time_limit: DEFAULT_TIME_LIMIT_S,
        memory_limit: DEFAULT_MEMORY_LIMIT_MB,
    })
}

fn cc_tests(v: &Value, key: &str) -> Result<Vec<TestCase>, String> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(t) => zip_tests(
            &str_array(t.get("input").unwrap_or(&Value::Null)),
            &str_array(t.get("output").unwrap_or(&Value::Null)),
        ),
    }
}

fn from_codecontests(v: &Value, language: &str) -> Result<Problem, String> {
    let id = id_field(v, "name")?;
    let statement = str_field(v, "description")?.trim().to_string();
    let sample_tests = cc_tests(v, "public_tests")?;
    let mut hidden_tests = cc_tests(v, "private_tests")?;
    hidden_tests.extend(cc_tests(v, "generated_tests")?);
    let time_limit = v
        .get("time_limit")
        .filter(|t| !t.is_null())
        .map(|t| {
            let secs = t.get("seconds").and_then(Value::as_f64).unwrap_or(0.0);
            let nanos = t.get("nanos").and_then(Value::as_f64).unwrap_or(0.0);
            secs + nanos / 1e9
        })
        .filter(|t| *t > 0.0)
        .unwrap_or(DEFAULT_TIME_LIMIT_S);
    let memory_limit = v
        .get("memory_limit_bytes")
        .and_then(Value::as_u64)
        .map(|b| b / (1024 * 1024))
        .filter(|m| *m > 0)
        .unwrap_or(DEFAULT_MEMORY_LIMIT_MB);
    Ok(Problem {
        id,
        statement,
        sample_tests,
        hidden_tests,
        language: language.to_string(),
        source: "codecontests".into(),
        time_limit,
        memory_limit,
    })
}
