//! Blocking HTTP client for a completion server.
//!
//! `POST <url>` with `Content-Type: application/json`:
//!
//! ```text
//! request:  {"prompt": "<text>", "max_new_tokens": <int>, "stop": "<text>"}
//! response: {"text": "<completion>"}
//! ```
//!
//! Servers may return the prompt followed by the completion; a leading copy of
//! the prompt is removed. The stop sequence is applied again on the client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{apply_stop, Backend, BackendError, GenerationRequest, GenerationResponse};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

const BODY_EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(Duration::from_secs_f64)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_new_tokens: usize,
    stop: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

pub struct HttpBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.url)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let wire = WireRequest {
            prompt: &request.prompt,
            max_new_tokens: request.max_new_tokens,
            stop: &request.stop,
        };
        let response = self
            .client
            .post(&self.config.url)
            .json(&wire)
            .send()
            .map_err(|e| self.transport_error(e))?;
        let status = response.status();
        let body = response.text().map_err(|e| self.transport_error(e))?;
        if !status.is_success() {
            return Err(BackendError::Remote {
                status: status.as_u16(),
                body: body.chars().take(BODY_EXCERPT_CHARS).collect(),
            });
        }
        let parsed: WireResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::Malformed(format!("{e}: {body:.80}")))?;
        let text = parsed.text.strip_prefix(request.prompt.as_str()).unwrap_or(&parsed.text);
        Ok(GenerationResponse {
            completion: apply_stop(text, &request.stop).to_string(),
            backend_id: self.id(),
            latency: started.elapsed(),
        })
    }
}

impl HttpBackend {
    fn transport_error(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.config.timeout)
        } else {
            BackendError::Transport(e.to_string())
        }
    }
}

/// One-off request without keeping a client around.
pub fn http_generate(
    config: &EndpointConfig,
    request: &GenerationRequest,
) -> Result<GenerationResponse, BackendError> {
    HttpBackend::new(config.clone())?.generate(request)
}
