//! Corpus files and per-role adapter training manifests.
//!
//! A corpus is one JSON object per line. A manifest is a declarative
//! hand-off to an external trainer, bound to its corpus by a SHA-256 digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curator::TrainingExample;
use crate::digest::sha256_hex;
use crate::fsutil::write_atomic;
use crate::role::AgentRole;

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_BASE_MODEL: &str = "Qwen/Qwen2.5-7B-Instruct";
pub const DEFAULT_RANK: u32 = 32;
pub const DEFAULT_LEARNING_RATE: f64 = 2e-5;
pub const DEFAULT_GRAD_ACCUM: u32 = 16;
pub const DEFAULT_EPOCHS: u32 = 3;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("example {index} has role {found}, expected {expected}")]
    RoleMismatch {
        index: usize,
        expected: AgentRole,
        found: AgentRole,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Corpus file name for a role inside a corpus directory.
pub fn corpus_file_name(role: AgentRole) -> String {
    format!("{role}.jsonl")
}

pub fn corpus_text(examples: &[TrainingExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Writes `examples` atomically; every example must have `role`.
pub fn write_corpus(examples: &[TrainingExample], role: AgentRole, path: &Path) -> Result<usize, EmitError> {
    if let Some((index, ex)) = examples.iter().enumerate().find(|(_, e)| e.role != role) {
        return Err(EmitError::RoleMismatch {
            index,
            expected: role,
            found: ex.role,
        });
    }
    write_atomic(path, corpus_text(examples).as_bytes()).map_err(io_err(path))?;
    Ok(examples.len())
}

pub fn read_corpus(path: &Path) -> Result<Vec<TrainingExample>, EmitError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EmitError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Query, Projection::Key, Projection::Value, Projection::Output];
}

impl std::str::FromStr for Projection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "query" | "q" | "q_proj" => Ok(Projection::Query),
            "key" | "k" | "k_proj" => Ok(Projection::Key),
            "value" | "v" | "v_proj" => Ok(Projection::Value),
            "output" | "o" | "o_proj" => Ok(Projection::Output),
            other => Err(format!("unknown projection `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub manifest_version: u32,
    pub role: AgentRole,
    pub base_model: String,
    pub adapter_rank: u32,
    pub target_projections: Vec<Projection>,
    pub learning_rate: f64,
    pub gradient_accumulation: u32,
    pub epochs: u32,
    pub corpus_path: PathBuf,
    /// `sha256:` followed by the hex digest of the corpus file bytes.
    pub corpus_digest: String,
    pub example_count: usize,
    /// True when any hyperparameter was overridden.
    pub tuned: bool,
}

impl AdapterManifest {
    pub fn validate(&self) -> Result<(), EmitError> {
        if self.adapter_rank == 0 {
            return Err(EmitError::Invalid("adapter_rank must be positive".into()));
        }
        if self.target_projections.is_empty() {
            return Err(EmitError::Invalid("target_projections must not be empty".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EmitError::Invalid("learning_rate must be positive".into()));
        }
        if self.gradient_accumulation == 0 || self.epochs == 0 {
            return Err(EmitError::Invalid("gradient_accumulation and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Per-role hyperparameter overrides; unset fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestOverrides {
    pub base_model: Option<String>,
    pub adapter_rank: Option<u32>,
    pub target_projections: Option<Vec<Projection>>,
    pub learning_rate: Option<f64>,
    pub gradient_accumulation: Option<u32>,
    pub epochs: Option<u32>,
}

impl ManifestOverrides {
    fn is_empty(&self) -> bool {
        *self == ManifestOverrides::default()
    }
}

pub fn corpus_digest(path: &Path) -> Result<String, EmitError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(format!("sha256:{}", sha256_hex(&bytes)))
}

/// Builds the manifest for `corpus_path` without writing it.
pub fn build_manifest(
    role: AgentRole,
    corpus_path: &Path,
    overrides: &ManifestOverrides,
) -> Result<AdapterManifest, EmitError> {
    let abs = std::fs::canonicalize(corpus_path).map_err(io_err(corpus_path))?;
    let examples = read_corpus(&abs)?;
    if let Some((index, ex)) = examples.iter().enumerate().find(|(_, e)| e.role != role) {
        return Err(EmitError::RoleMismatch {
            index,
            expected: role,
            found: ex.role,
        });
    }
    let o = overrides.clone();
    let manifest = AdapterManifest {
        manifest_version: MANIFEST_VERSION,
        role,
        base_model: o.base_model.unwrap_or_else(|| DEFAULT_BASE_MODEL.to_string()),
        adapter_rank: o.adapter_rank.unwrap_or(DEFAULT_RANK),
        target_projections: o.target_projections.unwrap_or_else(|| Projection::ALL.to_vec()),
        learning_rate: o.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE),
        gradient_accumulation: o.gradient_accumulation.unwrap_or(DEFAULT_GRAD_ACCUM),
        epochs: o.epochs.unwrap_or(DEFAULT_EPOCHS),
        corpus_digest: corpus_digest(&abs)?,
        corpus_path: abs,
        example_count: examples.len(),
        tuned: !overrides.is_empty(),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Builds the manifest and writes it to `out` as pretty JSON.
pub fn write_manifest(
    role: AgentRole,
    corpus_path: &Path,
    overrides: &ManifestOverrides,
    out: &Path,
) -> Result<AdapterManifest, EmitError> {
    let manifest = build_manifest(role, corpus_path, overrides)?;
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(out, text.as_bytes()).map_err(io_err(out))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<AdapterManifest, EmitError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| EmitError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub expected: String,
    pub actual: String,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.expected == self.actual
    }
}

/// Recomputes the corpus digest named by the manifest at `path`.
pub fn verify_manifest(path: &Path) -> Result<Verification, EmitError> {
    let manifest = read_manifest(path)?;
    manifest.validate()?;
    Ok(Verification {
        actual: corpus_digest(&manifest.corpus_path)?,
        expected: manifest.corpus_digest,
    })
}
