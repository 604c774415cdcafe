use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{Backend, ChatRequest, ChatResponse, GatewayError, Usage};

/// Rough usage estimate for offline backends: one token per four bytes.
fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

fn offline_response(id: &str, req: &ChatRequest, content: String) -> ChatResponse {
    let prompt: u64 = req.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
    ChatResponse {
        usage: Usage {
            prompt_tokens: prompt,
            completion_tokens: estimate_tokens(&content),
        },
        content,
        latency_ms: 1,
        backend_id: id.to_string(),
    }
}

/// Backend answering from a closure; handy for fixtures and tests.
pub struct FnBackend<F> {
    id: String,
    respond: F,
    calls: AtomicU64,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> String + Send + Sync,
{
    pub fn new(id: impl Into<String>, respond: F) -> Self {
        FnBackend {
            id: id.into(),
            respond,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> String + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(offline_response(&self.id, req, (self.respond)(req)))
    }
}

/// Replies with a fixed queue of responses, repeating the last one once the
/// queue runs dry, and logs every request it receives.
pub struct ScriptedBackend {
    id: String,
    queue: Mutex<VecDeque<String>>,
    last: Mutex<Option<String>>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(id: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            id: id.into(),
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            last: Mutex::new(None),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().unwrap().push(req.clone());
        let next = self.queue.lock().unwrap().pop_front();
        let content = match next {
            Some(c) => {
                *self.last.lock().unwrap() = Some(c.clone());
                c
            }
            None => self.last.lock().unwrap().clone().ok_or_else(|| {
                GatewayError::Transport {
                    attempts: 1,
                    message: format!("scripted backend `{}` has no responses", self.id),
                }
            })?,
        };
        Ok(offline_response(&self.id, req, content))
    }
}
