//! Client for OpenAI-compatible chat-completion endpoints.

use std::thread;
use std::time::{Duration, Instant};

use cove_core::{Backend, BackendError, Completion, CompletionRequest};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::batch::map_bounded;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Base URL such as `http://localhost:8000/v1`, or the full
    /// `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    /// Reject prompts above this many whitespace-separated tokens before
    /// sending them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_limit: Option<usize>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".to_string(),
            model: "default".to_string(),
            timeout_secs: 120,
            max_attempts: 3,
            backoff_ms: 500,
            token_limit: None,
        }
    }
}

pub struct HttpBackend {
    settings: HttpSettings,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    id: String,
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(settings: HttpSettings, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        let base = settings.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") { base.to_string() } else { format!("{base}/chat/completions") };
        let id = format!("http:{}", settings.model);
        Ok(Self { settings, url, api_key, client, id })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        });
        if !request.decoding.stop_sequences.is_empty() {
            body["stop"] = json!(request.decoding.stop_sequences);
        }
        body
    }

    fn attempt(&self, body: &Value, tokens: usize) -> Result<String, Failure> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retryable(format!("status {status}: {}", short(&text))));
        }
        if !status.is_success() {
            let lower = text.to_lowercase();
            if lower.contains("context_length") || lower.contains("maximum context length") {
                return Err(Failure::Fatal(BackendError::TokenLimitExceeded {
                    tokens,
                    limit: self.settings.token_limit.unwrap_or(0),
                }));
            }
            return Err(Failure::Fatal(BackendError::Rejected { status: status.as_u16(), message: short(&text) }));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(BackendError::Rejected { status: status.as_u16(), message: format!("bad JSON: {e}") }))?;
        let choice = &v["choices"][0];
        choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                Failure::Fatal(BackendError::Rejected { status: status.as_u16(), message: "response has no completion text".into() })
            })
    }
}

fn short(s: &str) -> String {
    s.chars().take(200).collect()
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let tokens = request.prompt.split_whitespace().count();
        if let Some(limit) = self.settings.token_limit.filter(|&l| tokens > l) {
            return Err(BackendError::TokenLimitExceeded { tokens, limit });
        }
        let body = self.body(request);
        let start = Instant::now();
        let attempts = self.settings.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(16))));
            }
            match self.attempt(&body, tokens) {
                Ok(text) => return Ok(Completion::new(text, start.elapsed().as_millis() as u64)),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => last = message,
            }
        }
        Err(BackendError::Unavailable { attempts, message: last })
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<Completion, BackendError>> {
        map_bounded(requests, parallelism, |r| self.complete(r))
    }
}
