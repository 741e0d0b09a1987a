//! OpenAI-compatible HTTP backends for chat completions and embeddings.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use hierag_core::embed::{EmbedBackend, EmbedError, EmbeddingVector};
use hierag_core::llm::{GenRequest, GenResponse, LlmBackend, LlmError, Usage};
use log::{info, warn};
use serde_json::{json, Value};

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "HIERAG_API_KEY";
pub const DEFAULT_MAX_INFLIGHT: usize = 4;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

/// Bearer token. Never printed.
#[derive(Clone)]
pub struct Credential(String);

impl Credential {
    pub fn new(token: impl Into<String>) -> Self {
        Credential(token.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .map(Credential)
    }

    fn redact(&self, text: &str) -> String {
        if self.0.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.0, "[redacted]")
        }
    }
}

impl std::fmt::Debug for Credential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Credential([redacted])")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: DEFAULT_MAX_RETRIES,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32
            .checked_shl(retry.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct HttpSettings {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint_url: String,
    pub model_name: String,
    pub retry: RetryPolicy,
    pub max_inflight: usize,
    pub timeout: Duration,
}

impl HttpSettings {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        HttpSettings {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            retry: RetryPolicy::default(),
            max_inflight: DEFAULT_MAX_INFLIGHT,
            timeout: Duration::from_secs(120),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    in_use: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(max: usize) -> Self {
        Gate {
            in_use: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Auth(String),
    RateLimited { attempts: u32 },
    Unreachable { attempts: u32, detail: String },
    Malformed(String),
}

enum Failure {
    Fatal(TransportError),
    Retry { rate_limited: bool, detail: String },
}

struct Transport {
    client: reqwest::blocking::Client,
    settings: HttpSettings,
    credential: Credential,
    gate: Gate,
}

impl Transport {
    fn new(settings: HttpSettings, credential: Credential) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| TransportError::Unreachable {
                attempts: 0,
                detail: e.to_string(),
            })?;
        Ok(Transport {
            client,
            gate: Gate::new(settings.max_inflight),
            settings,
            credential,
        })
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.settings.endpoint_url.trim_end_matches('/'),
            path
        )
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let _permit = self.gate.acquire();
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.credential.0)
            .json(body)
            .send()
            .map_err(|e| Failure::Retry {
                rate_limited: false,
                detail: self.credential.redact(&e.to_string()),
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retry {
            rate_limited: false,
            detail: self.credential.redact(&e.to_string()),
        })?;
        let snippet: String = self.credential.redact(&text).chars().take(200).collect();
        match status.as_u16() {
            200..=299 => serde_json::from_str(&text).map_err(|e| {
                Failure::Fatal(TransportError::Malformed(format!("invalid JSON: {e}")))
            }),
            401 | 403 => Err(Failure::Fatal(TransportError::Auth(format!(
                "HTTP {status}: {snippet}"
            )))),
            429 => Err(Failure::Retry {
                rate_limited: true,
                detail: format!("HTTP {status}"),
            }),
            500..=599 | 408 => Err(Failure::Retry {
                rate_limited: false,
                detail: format!("HTTP {status}: {snippet}"),
            }),
            _ => Err(Failure::Fatal(TransportError::Malformed(format!(
                "HTTP {status}: {snippet}"
            )))),
        }
    }

    /// POSTs `body` with retries on connection failures, 408, 429 and 5xx.
    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let url = self.url(path);
        let total = self.settings.retry.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&url, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry {
                    rate_limited,
                    detail,
                }) => {
                    if attempt >= total {
                        warn!("attempt {attempt}/{total} to {url} failed: {detail}; giving up");
                        return Err(if rate_limited {
                            TransportError::RateLimited { attempts: attempt }
                        } else {
                            TransportError::Unreachable {
                                attempts: attempt,
                                detail,
                            }
                        });
                    }
                    let delay = self.settings.retry.delay(attempt);
                    warn!(
                        "attempt {attempt}/{total} to {url} failed: {detail}; retrying in {} ms",
                        delay.as_millis()
                    );
                    thread::sleep(delay);
                }
            }
        }
    }
}

/// Chat-completions client.
pub struct RemoteLlm {
    transport: Transport,
    backend_id: String,
    context_budget: usize,
}

impl RemoteLlm {
    pub fn new(
        settings: HttpSettings,
        credential: Credential,
        context_budget: usize,
    ) -> Result<Self, LlmError> {
        let backend_id = format!("openai:{}", settings.model_name);
        info!(
            "llm backend {backend_id} at {} (max_retries={}, max_inflight={})",
            settings.endpoint_url, settings.retry.max_retries, settings.max_inflight
        );
        let transport = Transport::new(settings, credential).map_err(to_llm_error)?;
        Ok(RemoteLlm {
            transport,
            backend_id,
            context_budget,
        })
    }
}

fn to_llm_error(e: TransportError) -> LlmError {
    match e {
        TransportError::Auth(m) => LlmError::Auth(m),
        TransportError::RateLimited { attempts } => LlmError::RateLimited { attempts },
        TransportError::Unreachable { attempts, detail } => {
            LlmError::BackendUnreachable { attempts, detail }
        }
        TransportError::Malformed(m) => LlmError::MalformedResponse(m),
    }
}

fn to_embed_error(e: TransportError) -> EmbedError {
    match e {
        TransportError::Auth(m) => EmbedError::Auth(m),
        TransportError::RateLimited { attempts } => {
            EmbedError::BackendUnreachable(format!("rate limited after {attempts} attempts"))
        }
        TransportError::Unreachable { attempts, detail } => {
            EmbedError::BackendUnreachable(format!("after {attempts} attempts: {detail}"))
        }
        TransportError::Malformed(m) => EmbedError::MalformedResponse(m),
    }
}

impl LlmBackend for RemoteLlm {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn context_budget(&self) -> usize {
        self.context_budget
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError> {
        req.validate()?;
        let body = json!({
            "model": self.transport.settings.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        let v = self
            .transport
            .post("chat/completions", &body)
            .map_err(to_llm_error)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                LlmError::MalformedResponse("missing choices[0].message.content".into())
            })?
            .to_string();
        let count = |p: &str| v.pointer(p).and_then(Value::as_u64).unwrap_or(0);
        Ok(GenResponse {
            text,
            usage: Usage {
                prompt_tokens: count("/usage/prompt_tokens"),
                completion_tokens: count("/usage/completion_tokens"),
            },
            backend_id: self.backend_id.clone(),
        })
    }
}

/// Embeddings client.
pub struct RemoteEmbedder {
    transport: Transport,
    dim: Option<usize>,
}

impl RemoteEmbedder {
    /// `dim`, if given, is enforced on every response.
    pub fn new(
        settings: HttpSettings,
        credential: Credential,
        dim: Option<usize>,
    ) -> Result<Self, EmbedError> {
        info!(
            "embed backend openai:{} at {}",
            settings.model_name, settings.endpoint_url
        );
        let transport = Transport::new(settings, credential).map_err(to_embed_error)?;
        Ok(RemoteEmbedder { transport, dim })
    }
}

impl EmbedBackend for RemoteEmbedder {
    fn backend_id(&self) -> String {
        format!("openai:{}", self.transport.settings.model_name)
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let body = json!({
            "model": self.transport.settings.model_name,
            "input": text,
        });
        let v = self
            .transport
            .post("embeddings", &body)
            .map_err(to_embed_error)?;
        let raw = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::MalformedResponse("missing data[0].embedding".into()))?;
        let values = raw
            .iter()
            .map(|x| x.as_f64().ok_or(EmbedError::NonFinite))
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(d) = self.dim {
            if values.len() != d {
                return Err(EmbedError::DimensionMismatch {
                    expected: d,
                    got: values.len(),
                });
            }
        }
        EmbeddingVector::new(values)
    }
}
