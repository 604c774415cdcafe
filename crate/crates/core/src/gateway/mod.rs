//! Chat-completion client layer shared by every agent.
//!
//! A [`Backend`] turns a [`ChatRequest`] into a [`ChatResponse`]. Live
//! traffic goes through [`HttpBackend`] (OpenAI-compatible
//! `/v1/chat/completions`); [`RecordingBackend`] and [`ReplayBackend`]
//! capture and replay exchanges through a line-delimited cassette so whole
//! pipeline runs are reproducible offline.

mod cassette;
mod http;
mod scripted;
mod throttle;
pub mod stub;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

pub use cassette::{read_cassette, CassetteEntry, CassetteWriter, RecordingBackend, ReplayBackend};
pub use throttle::{Permits, ThrottledBackend};
pub use http::{HttpBackend, RetryPolicy};
pub use scripted::{FnBackend, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl ChatRequest {
    /// Structural checks applied before a request leaves the process.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role != MessageRole::Assistant && m.content.is_empty() {
                return Err(GatewayError::InvalidRequest(format!(
                    "message {i} ({:?}) has empty content",
                    m.role
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no cassette entry for request key {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cassette I/O: {0}")]
    Cassette(String),
}

/// Anything that can answer a chat-completion request.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Sends `req` through `backend` after validating it.
pub fn complete(req: &ChatRequest, backend: &dyn Backend) -> Result<ChatResponse, GatewayError> {
    req.validate()?;
    backend.complete(req)
}

/// Deterministic digest identifying a request in a cassette.
///
/// The digest covers model, messages (in order), temperature, max_tokens and
/// stop sequences through their JSON serialization, which has a fixed field
/// order.
pub fn cassette_key(req: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct KeyView<'a> {
        model: &'a str,
        messages: &'a [ChatMessage],
        temperature: f64,
        max_tokens: u32,
        stop: &'a Option<Vec<String>>,
    }
    let view = KeyView {
        model: &req.model,
        messages: &req.messages,
        temperature: req.temperature,
        max_tokens: req.max_tokens,
        stop: &req.stop,
    };
    let bytes = serde_json::to_vec(&view).expect("request serializes");
    sha256_hex(&bytes)
}

/// Token, call and time totals for a run. `wall_time_ms` accumulates model
/// latency as reported by the backend, so replayed runs reproduce it exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
    pub wall_time_ms: u64,
}

impl CostLedger {
    pub fn add_response(&mut self, resp: &ChatResponse) {
        self.input_tokens += resp.usage.prompt_tokens;
        self.output_tokens += resp.usage.completion_tokens;
        self.calls += 1;
        self.wall_time_ms += resp.latency_ms;
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.calls += other.calls;
        self.wall_time_ms += other.wall_time_ms;
    }
}

/// Pure form of [`CostLedger::add_response`].
pub fn ledger_add(ledger: CostLedger, resp: &ChatResponse) -> CostLedger {
    let mut next = ledger;
    next.add_response(resp);
    next
}

impl<'a> std::iter::Sum<&'a CostLedger> for CostLedger {
    fn sum<I: Iterator<Item = &'a CostLedger>>(iter: I) -> Self {
        let mut total = CostLedger::default();
        for l in iter {
            total.merge(l);
        }
        total
    }
}

/// Lock-free accumulator shared between concurrent workers.
#[derive(Debug, Default)]
pub struct SharedLedger {
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
    calls: AtomicU64,
    wall_time_ms: AtomicU64,
}

impl SharedLedger {
    pub fn add(&self, l: &CostLedger) {
        self.input_tokens.fetch_add(l.input_tokens, Ordering::Relaxed);
        self.output_tokens.fetch_add(l.output_tokens, Ordering::Relaxed);
        self.calls.fetch_add(l.calls, Ordering::Relaxed);
        self.wall_time_ms.fetch_add(l.wall_time_ms, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CostLedger {
        CostLedger {
            input_tokens: self.input_tokens.load(Ordering::Relaxed),
            output_tokens: self.output_tokens.load(Ordering::Relaxed),
            calls: self.calls.load(Ordering::Relaxed),
            wall_time_ms: self.wall_time_ms.load(Ordering::Relaxed),
        }
    }
}
