//! Canonical problem format and benchmark loading.
//!
//! A benchmark is a UTF-8 file with one JSON object per line:
//!
//! ```text
//! {"id": "...", "statement": "...",
//!  "sample_tests": [{"input": "...", "output": "..."}],
//!  "hidden_tests": [{"input": "...", "output": "..."}],
//!  "language": "python", "source": "xcodeeval",
//!  "time_limit_s": 2.0, "memory_limit_mb": 256}
//! ```
//!
//! `time_limit_s` and `memory_limit_mb` may be omitted and default to
//! [`DEFAULT_TIME_LIMIT_S`] / [`DEFAULT_MEMORY_LIMIT_MB`]. Loading is
//! all-or-nothing: a single malformed record fails the whole file.

pub mod import;

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::sandbox::normalize_output;

pub const DEFAULT_TIME_LIMIT_S: f64 = 5.0;
pub const DEFAULT_MEMORY_LIMIT_MB: u64 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    #[serde(rename = "output")]
    pub expected_output: String,
    /// Marks a test whose reference output is legitimately empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_empty_output: bool,
}

impl TestCase {
    pub fn new(input: impl Into<String>, expected_output: impl Into<String>) -> Self {
        TestCase {
            input: input.into(),
            expected_output: expected_output.into(),
            allow_empty_output: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub sample_tests: Vec<TestCase>,
    pub hidden_tests: Vec<TestCase>,
    pub language: String,
    pub source: String,
    #[serde(rename = "time_limit_s")]
    pub time_limit: f64,
    #[serde(rename = "memory_limit_mb")]
    pub memory_limit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub name: String,
    pub problem_count: usize,
    pub problems: Vec<Problem>,
}

impl BenchmarkManifest {
    pub fn new(name: impl Into<String>, problems: Vec<Problem>) -> Self {
        BenchmarkManifest {
            name: name.into(),
            problem_count: problems.len(),
            problems,
        }
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.problems.iter().map(|p| p.id.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: invalid field `{field}`: {reason}")]
    Schema {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("import adapter error: {0}")]
    Import(String),
}

impl CorpusError {
    fn schema(line: usize, field: &str, reason: impl Into<String>) -> Self {
        CorpusError::Schema {
            line,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// `(line, field)` for schema errors.
    pub fn schema_location(&self) -> Option<(usize, &str)> {
        match self {
            CorpusError::Schema { line, field, .. } => Some((*line, field.as_str())),
            _ => None,
        }
    }
}

/// One invariant violation found by [`validate_problem`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every `Problem` invariant; an empty list means the problem is valid.
pub fn validate_problem(p: &Problem) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.id.trim().is_empty() {
        out.push(Violation {
            field: "id",
            rule: "must be non-empty".into(),
        });
    }
    if p.sample_tests.is_empty() && p.hidden_tests.is_empty() {
        out.push(Violation {
            field: "sample_tests",
            rule: "may be empty only if hidden_tests is non-empty".into(),
        });
    }
    if !(p.time_limit.is_finite() && p.time_limit > 0.0) {
        out.push(Violation {
            field: "time_limit_s",
            rule: format!("must be > 0, got {}", p.time_limit),
        });
    }
    if p.memory_limit == 0 {
        out.push(Violation {
            field: "memory_limit_mb",
            rule: "must be > 0".into(),
        });
    }
    for (field, tests) in [("sample_tests", &p.sample_tests), ("hidden_tests", &p.hidden_tests)] {
        for (i, t) in tests.iter().enumerate() {
            if !t.allow_empty_output && normalize_output(&t.expected_output).is_empty() {
                out.push(Violation {
                    field,
                    rule: format!("test {i} has an empty expected output without allow_empty_output"),
                });
            }
        }
    }
    out
}

/// Loads a canonical benchmark file. The manifest name is the file stem.
pub fn load_benchmark(path: impl AsRef<Path>) -> Result<BenchmarkManifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_benchmark(&name, &text)
}

/// Parses canonical benchmark text. Blank lines are ignored; line numbers are 1-based.
pub fn parse_benchmark(name: &str, text: &str) -> Result<BenchmarkManifest, CorpusError> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let problem = parse_record(line_no, line)?;
        if let Some(v) = validate_problem(&problem).into_iter().next() {
            return Err(CorpusError::schema(line_no, v.field, v.rule));
        }
        if !seen.insert(problem.id.clone()) {
            return Err(CorpusError::schema(
                line_no,
                "id",
                format!("duplicate id `{}`", problem.id),
            ));
        }
        problems.push(problem);
    }
    Ok(BenchmarkManifest::new(name, problems))
}

fn parse_record(line: usize, text: &str) -> Result<Problem, CorpusError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CorpusError::schema(line, "record", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(CorpusError::schema(line, "record", "expected a JSON object"));
    };
    Ok(Problem {
        id: required(&obj, line, "id")?,
        statement: required(&obj, line, "statement")?,
        sample_tests: required(&obj, line, "sample_tests")?,
        hidden_tests: required(&obj, line, "hidden_tests")?,
        language: required(&obj, line, "language")?,
        source: required(&obj, line, "source")?,
        time_limit: optional(&obj, line, "time_limit_s")?.unwrap_or(DEFAULT_TIME_LIMIT_S),
        memory_limit: optional(&obj, line, "memory_limit_mb")?.unwrap_or(DEFAULT_MEMORY_LIMIT_MB),
    })
}

fn required<T: serde::de::DeserializeOwned>(
    obj: &Map<String, Value>,
    line: usize,
    field: &str,
) -> Result<T, CorpusError> {
    optional(obj, line, field)?.ok_or_else(|| CorpusError::schema(line, field, "missing"))
}

fn optional<T: serde::de::DeserializeOwned>(
    obj: &Map<String, Value>,
    line: usize,
    field: &str,
) -> Result<Option<T>, CorpusError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => T::deserialize(v)
            .map(Some)
            .map_err(|e| CorpusError::schema(line, field, e.to_string())),
    }
}

/// Serializes problems in the canonical line format (one record per line, trailing newline).
pub fn to_canonical_lines(problems: &[Problem]) -> String {
    let mut out = String::new();
    for p in problems {
        out.push_str(&serde_json::to_string(p).expect("problem serializes"));
        out.push('\n');
    }
    out
}

pub fn write_benchmark(manifest: &BenchmarkManifest, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    crate::fsutil::write_atomic(path, to_canonical_lines(&manifest.problems).as_bytes()).map_err(
        |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
    )
}
