use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResponse, GatewayError, Usage};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retry_limit: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retry_limit: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.min(16))
    }
}

/// OpenAI-compatible endpoint reached over HTTP.
pub struct HttpBackend {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

enum Failure {
    Transient(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let base = base_url.trim_end_matches('/');
        HttpBackend {
            id: base.to_string(),
            endpoint: format!("{base}/v1/chat/completions"),
            api_key,
            retry,
            agent: agent(Duration::from_secs(600)),
        }
    }

    /// Replaces the per-request timeout.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = agent(timeout);
        self
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatResponse, Failure> {
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(stop) = &req.stop {
            body["stop"] = json!(stop);
        }
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let started = Instant::now();
        let mut resp = call
            .send_json(&body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if status == 408 || status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("HTTP {status}: {}", snippet(&text))));
        }
        if status >= 400 {
            return Err(Failure::Fatal(GatewayError::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {}", snippet(&text)),
            }));
        }
        parse_completion(&text, latency_ms, &self.id).map_err(Failure::Fatal)
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map(|(i, _)| i).unwrap_or(s.len());
    &s[..end]
}

pub(crate) fn parse_completion(
    text: &str,
    latency_ms: u64,
    backend_id: &str,
) -> Result<ChatResponse, GatewayError> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| GatewayError::MalformedResponse(format!("{e}: {}", snippet(text))))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?;
    let content = match content {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => {
            return Err(GatewayError::MalformedResponse(format!(
                "content is not a string: {other}"
            )))
        }
    };
    let count = |ptr: &str| v.pointer(ptr).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse {
        content,
        usage: Usage {
            prompt_tokens: count("/usage/prompt_tokens"),
            completion_tokens: count("/usage/completion_tokens"),
        },
        latency_ms,
        backend_id: backend_id.to_string(),
    })
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut last = String::new();
        for attempt in 0..=self.retry.retry_limit {
            if attempt > 0 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.attempt(req) {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::warn!("{}: attempt {} failed: {msg}", self.id, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.retry_limit + 1,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
    }

    #[test]
    fn parses_openai_shape() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":100,"completion_tokens":50}}"#;
        let r = parse_completion(body, 5, "b").unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.usage, Usage { prompt_tokens: 100, completion_tokens: 50 });
        assert!(parse_completion("{}", 0, "b").is_err());
        assert!(parse_completion("nope", 0, "b").is_err());
    }
}
