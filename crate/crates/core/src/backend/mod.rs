//! Text-generation backends.
//!
//! Decoding happens outside this crate; a [`Backend`] turns a prompt into a
//! completion. [`mock`] has deterministic implementations for tests and dry
//! runs, [`http`] talks to a completion server.

pub mod http;
pub mod mock;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{EndpointConfig, HttpBackend};
pub use mock::{CopyTargetBackend, EchoBackend, LexiconBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    /// Generation ends before the first occurrence of this text. Empty disables it.
    pub stop: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, max_new_tokens: usize) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens,
            stop: "\n".into(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if self.max_new_tokens < 1 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    /// Generated text only; never includes the prompt.
    pub completion: String,
    pub backend_id: String,
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("server returned {status}: {body}")]
    Remote { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::Timeout(_) | BackendError::Remote { .. }
        )
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

/// Cuts `text` before the first occurrence of `stop`.
pub fn apply_stop<'a>(text: &'a str, stop: &str) -> &'a str {
    if stop.is_empty() {
        return text;
    }
    text.find(stop).map_or(text, |i| &text[..i])
}

/// Keeps at most `max_tokens` whitespace-separated tokens.
pub(crate) fn clip_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

/// Caps the number of concurrent `generate` calls on a shared backend.
pub struct LimitedBackend<B> {
    inner: B,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

impl<B: Backend> LimitedBackend<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        LimitedBackend {
            inner,
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        }
    }
}

impl<B: Backend> Backend for LimitedBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let result = self.inner.generate(request);
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.released.notify_one();
        result
    }
}

/// Calls `generate`, retrying up to `retries` more times on transport errors.
pub fn generate_with_retries(
    backend: &dyn Backend,
    request: &GenerationRequest,
    retries: usize,
) -> Result<GenerationResponse, BackendError> {
    let mut attempt = 0;
    loop {
        match backend.generate(request) {
            Err(e) if e.is_transport() && attempt < retries => {
                attempt += 1;
                log::warn!("backend {} failed ({e}); retry {attempt}/{retries}", backend.id());
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Instant;

    #[test]
    fn stop_sequence() {
        assert_eq!(apply_stop("a b\nc", "\n"), "a b");
        assert_eq!(apply_stop("a b", "\n"), "a b");
        assert_eq!(apply_stop("a\nb", ""), "a\nb");
    }

    #[test]
    fn request_validation() {
        assert!(GenerationRequest::new("", 4).validate().is_err());
        assert!(GenerationRequest::new("x =", 0).validate().is_err());
        assert!(GenerationRequest::new("x =", 1).validate().is_ok());
    }

    struct Flaky {
        failures_left: AtomicUsize,
    }

    impl Backend for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }

        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(BackendError::Transport("connection reset".into()));
            }
            Ok(GenerationResponse {
                completion: "ok".into(),
                backend_id: self.id(),
                latency: Duration::ZERO,
            })
        }
    }

    #[test]
    fn retries_transport_errors_only_up_to_limit() {
        let b = Flaky {
            failures_left: AtomicUsize::new(2),
        };
        let req = GenerationRequest::new("p =", 1);
        assert!(generate_with_retries(&b, &req, 1).is_err());
        assert_eq!(generate_with_retries(&b, &req, 1).unwrap().completion, "ok");
    }

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Slow {
        fn id(&self) -> String {
            "slow".into()
        }

        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(GenerationResponse {
                completion: String::new(),
                backend_id: self.id(),
                latency: Duration::ZERO,
            })
        }
    }

    #[test]
    fn limit_caps_in_flight_calls() {
        let limited = Arc::new(LimitedBackend::new(
            Slow {
                current: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            },
            2,
        ));
        let start = Instant::now();
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let b = Arc::clone(&limited);
                std::thread::spawn(move || b.generate(&GenerationRequest::new("p =", 1)).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(limited.inner.peak.load(Ordering::SeqCst) <= 2);
        assert!(start.elapsed() >= Duration::from_millis(60));
    }
}
