use std::sync::{Arc, Condvar, Mutex};

use super::{Backend, ChatRequest, ChatResponse, GatewayError};

/// Counting semaphore shared by every backend that draws on one in-flight budget.
#[derive(Debug)]
pub struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    pub fn new(n: usize) -> Arc<Self> {
        Arc::new(Permits {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        })
    }

    pub(crate) fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

pub(crate) struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Bounds the number of in-flight completions across all wrapped backends
/// sharing the same [`Permits`].
pub struct ThrottledBackend {
    inner: Arc<dyn Backend>,
    permits: Arc<Permits>,
}

impl ThrottledBackend {
    pub fn new(inner: Arc<dyn Backend>, permits: Arc<Permits>) -> Self {
        ThrottledBackend { inner, permits }
    }
}

impl Backend for ThrottledBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let _permit = self.permits.acquire();
        self.inner.complete(req)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    use super::*;
    use crate::gateway::{ChatMessage, Usage};

    struct Slow {
        active: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Slow {
        fn id(&self) -> &str {
            "slow"
        }

        fn complete(&self, _req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok(ChatResponse {
                content: "ok".into(),
                usage: Usage::default(),
                latency_ms: 20,
                backend_id: "slow".into(),
            })
        }
    }

    #[test]
    fn in_flight_calls_never_exceed_permits() {
        let slow = Arc::new(Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let permits = Permits::new(2);
        let a = Arc::new(ThrottledBackend::new(slow.clone(), permits.clone()));
        let b = Arc::new(ThrottledBackend::new(slow.clone(), permits));
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.0,
            max_tokens: 8,
            stop: None,
        };
        std::thread::scope(|s| {
            for i in 0..8 {
                let backend = if i % 2 == 0 { a.clone() } else { b.clone() };
                let req = req.clone();
                s.spawn(move || backend.complete(&req).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
