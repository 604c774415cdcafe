//! Application configuration: one TOML document.
//!
//! ```toml
//! [pipeline]
//! plan_count = 3
//! debug_rounds = 5
//! format_retries = 2
//! output_limit_kb = 64
//!
//! [gateway]
//! mode = "live"               # live | record | replay
//! cassette = "cassettes/run.jsonl"
//! retry_limit = 3
//! backoff_ms = 500
//! timeout_s = 300
//!
//! [backends.retrieval]        # one table per role
//! base_url = "http://localhost:8000"
//! model = "Qwen/Qwen2.5-7B-Instruct"
//! adapter = "retrieval-lora"  # optional, sent as the request model
//! temperature = 0.0
//! max_tokens = 2048
//! api_key_env = "OPENAI_API_KEY"
//!
//! [toolchains.python]         # merged over the built-in table
//! run_cmd = "python3 {src}"
//! file_ext = "py"
//!
//! [curation]
//! max_supervision_rounds = 3
//!
//! [prompts]
//! file = "prompts.toml"       # optional; the shipped templates otherwise
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. Secrets never appear in the file: `api_key_env` names the
//! environment variable that holds the bearer token.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curator::DEFAULT_MAX_SUPERVISION_ROUNDS;
use crate::gateway::{
    Backend, CassetteWriter, GatewayError, HttpBackend, Permits, RecordingBackend, ReplayBackend, RetryPolicy,
    ThrottledBackend,
};
use crate::orchestrator::{Pipeline, PipelineConfig, PromptError, PromptTemplates, RoleBinding, RoleBindings};
use crate::role::AgentRole;
use crate::sandbox::{Sandbox, ToolchainTable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: no backend configured for the {0} role (add a [backends.{0}] table)")]
    MissingBackend(AgentRole),
    #[error("config: [backends.{0}] needs base_url in {1} mode")]
    MissingBaseUrl(AgentRole, &'static str),
    #[error("config: gateway mode {0} needs a cassette path")]
    MissingCassette(&'static str),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Prompts(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl GatewayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Live,
            cassette: None,
            retry_limit: 3,
            backoff_ms: 500,
            timeout_s: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

fn default_max_tokens() -> u32 {
    2048
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub max_supervision_rounds: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            max_supervision_rounds: DEFAULT_MAX_SUPERVISION_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub gateway: GatewayConfig,
    pub backends: BTreeMap<AgentRole, BackendConfig>,
    pub toolchains: ToolchainTable,
    pub curation: CurationConfig,
    pub prompts: PromptsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl AppConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Canonical TOML of the effective configuration, without secrets.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn require_roles(&self, roles: &[AgentRole]) -> Result<(), ConfigError> {
        match roles.iter().find(|r| !self.backends.contains_key(r)) {
            Some(r) => Err(ConfigError::MissingBackend(*r)),
            None => Ok(()),
        }
    }

    pub fn prompt_templates(&self) -> Result<PromptTemplates, ConfigError> {
        Ok(match &self.prompts.file {
            Some(f) => PromptTemplates::load(&self.resolve(f))?,
            None => PromptTemplates::default(),
        })
    }

    pub fn sandbox(&self) -> Sandbox {
        Sandbox::new(ToolchainTable::default().merged(&self.toolchains))
    }

    pub fn cassette_path(&self) -> Option<PathBuf> {
        self.gateway.cassette.as_deref().map(|p| self.resolve(p))
    }

    /// Backend bindings for `roles`, honouring the gateway mode. At most
    /// `llm_jobs` completions are in flight across all roles.
    pub fn bindings(&self, roles: &[AgentRole], llm_jobs: usize) -> Result<RoleBindings, ConfigError> {
        self.require_roles(roles)?;
        let mode = self.gateway.mode;
        let permits = Permits::new(llm_jobs);
        let retry = RetryPolicy {
            retry_limit: self.gateway.retry_limit,
            backoff_base: Duration::from_millis(self.gateway.backoff_ms),
        };
        let replay: Option<Arc<dyn Backend>> = match mode {
            GatewayMode::Replay => {
                let path = self.cassette_path().ok_or(ConfigError::MissingCassette("replay"))?;
                Some(Arc::new(ReplayBackend::open(&path)?))
            }
            _ => None,
        };
        let writer = match mode {
            GatewayMode::Record => {
                let path = self.cassette_path().ok_or(ConfigError::MissingCassette("record"))?;
                Some(Arc::new(CassetteWriter::open(path)?))
            }
            _ => None,
        };
        let mut out = RoleBindings::new();
        for role in roles {
            let bc = &self.backends[role];
            let backend: Arc<dyn Backend> = match &replay {
                Some(r) => r.clone(),
                None => {
                    let url = bc
                        .base_url
                        .as_deref()
                        .ok_or(ConfigError::MissingBaseUrl(*role, mode.as_str()))?;
                    let key = bc.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                    let http: Arc<dyn Backend> = Arc::new(
                        HttpBackend::new(url, key, retry).with_timeout(Duration::from_secs(self.gateway.timeout_s)),
                    );
                    match &writer {
                        Some(w) => Arc::new(RecordingBackend::shared(http, w.clone())),
                        None => http,
                    }
                }
            };
            let backend: Arc<dyn Backend> = Arc::new(ThrottledBackend::new(backend, permits.clone()));
            out.insert(
                *role,
                RoleBinding {
                    backend,
                    model: bc.model.clone(),
                    adapter: bc.adapter.clone(),
                    temperature: bc.temperature,
                    max_tokens: bc.max_tokens,
                },
            );
        }
        Ok(out)
    }

    /// A pipeline bound to `roles` with this config's templates and toolchains.
    pub fn pipeline(&self, roles: &[AgentRole], llm_jobs: usize) -> Result<Pipeline, ConfigError> {
        Ok(Pipeline::new(self.pipeline, self.bindings(roles, llm_jobs)?)
            .with_prompts(self.prompt_templates()?)
            .with_judge(Arc::new(self.sandbox())))
    }
}
