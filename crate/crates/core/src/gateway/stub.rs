//! A tiny OpenAI-compatible server for tests and local smoke runs.
//!
//! Every response reports the same configured usage, so token accounting can
//! be checked against known numbers without a real model.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::Usage;

type Responder = dyn Fn(&Value) -> String + Send + Sync;

pub struct StubConfig {
    pub usage: Usage,
    /// Number of initial requests answered with HTTP 500.
    pub fail_first: u32,
    pub responder: Box<Responder>,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            usage: Usage {
                prompt_tokens: 100,
                completion_tokens: 50,
            },
            fail_first: 0,
            responder: Box::new(|body: &Value| {
                let last = body
                    .pointer("/messages")
                    .and_then(Value::as_array)
                    .and_then(|m| m.last())
                    .and_then(|m| m.get("content"))
                    .and_then(Value::as_str)
                    .unwrap_or("");
                format!("stub reply to: {last}")
            }),
        }
    }
}

pub struct StubServer {
    base_url: String,
    server: Arc<tiny_http::Server>,
    requests: Arc<AtomicU32>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(config: StubConfig) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicU32::new(0));
        let worker = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || serve(&server, &config, &requests))
        };
        Ok(StubServer {
            base_url: format!("http://{addr}"),
            server,
            requests,
            worker: Some(worker),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Requests received so far, including ones answered with an error.
    pub fn requests(&self) -> u32 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(server: &tiny_http::Server, config: &StubConfig, requests: &AtomicU32) {
    for mut request in server.incoming_requests() {
        let n = requests.fetch_add(1, Ordering::SeqCst);
        let json_header =
            tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        if request.url() != "/v1/chat/completions" {
            let _ = request.respond(tiny_http::Response::from_string("not found").with_status_code(404));
            continue;
        }
        if n < config.fail_first {
            let _ = request.respond(
                tiny_http::Response::from_string(r#"{"error":"overloaded"}"#)
                    .with_status_code(500)
                    .with_header(json_header),
            );
            continue;
        }
        let mut body = String::new();
        let parsed = std::io::Read::read_to_string(request.as_reader(), &mut body)
            .ok()
            .and_then(|_| serde_json::from_str::<Value>(&body).ok());
        let Some(parsed) = parsed else {
            let _ = request.respond(tiny_http::Response::from_string("bad json").with_status_code(400));
            continue;
        };
        let content = (config.responder)(&parsed);
        let reply = json!({
            "id": format!("stub-{n}"),
            "object": "chat.completion",
            "model": parsed.get("model").cloned().unwrap_or(Value::Null),
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            "usage": {
                "prompt_tokens": config.usage.prompt_tokens,
                "completion_tokens": config.usage.completion_tokens,
                "total_tokens": config.usage.prompt_tokens + config.usage.completion_tokens,
            }
        });
        let _ = request.respond(
            tiny_http::Response::from_string(reply.to_string()).with_header(json_header),
        );
    }
}
