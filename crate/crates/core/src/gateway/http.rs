//! OpenAI-compatible HTTP transport with bounded retries.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, Completion, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (attempts count from 1).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

/// Endpoint settings for one provider role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// e.g. `https://api.openai.com/v1`
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

enum Failure {
    Retryable(GatewayError),
    Fatal(GatewayError),
}

/// Blocking JSON-over-HTTP client shared by the chat and embedding backends.
#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpClient {
    pub fn new(timeout: Duration, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            api_key,
            retry,
        }
    }

    /// Resolves the key from `config.api_key_env`; a missing variable means
    /// unauthenticated requests, e.g. to a local server.
    pub fn from_config(config: &ProviderConfig, retry: RetryPolicy) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Self::new(Duration::from_secs(config.timeout_secs), api_key, retry)
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(serde_json::to_vec(body).expect("request body serialises"))
            .map_err(|e| Failure::Retryable(GatewayError::ProviderUnreachable(format!("{url}: {e}"))))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(GatewayError::ProviderUnreachable(format!("{url}: {e}"))))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(GatewayError::MalformedResponse(e.to_string()))),
            429 => Err(Failure::Retryable(GatewayError::RateLimited(format!("{url}: {text}")))),
            500..=599 => Err(Failure::Retryable(GatewayError::ProviderUnreachable(format!(
                "{url}: HTTP {status}"
            )))),
            _ => Err(Failure::Fatal(GatewayError::ProviderStatus { status, body: text })),
        }
    }

    pub fn post_json(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(url, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if attempt >= attempts => return Err(e),
                Err(Failure::Retryable(e)) => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}");
                    thread::sleep(self.retry.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Chat-completions body sent on the wire.
pub(crate) fn wire_body(model: &str, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
        .collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
    })
}

pub struct OpenAiProvider {
    client: HttpClient,
    url: String,
    model: String,
}

impl OpenAiProvider {
    pub fn new(config: &ProviderConfig, retry: RetryPolicy) -> Self {
        Self::with_client(config, HttpClient::from_config(config, retry))
    }

    pub fn with_client(config: &ProviderConfig, client: HttpClient) -> Self {
        Self {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
        }
    }
}

impl ChatProvider for OpenAiProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        if request.temperature != 0.0 {
            return Err(GatewayError::NonZeroTemperature(request.temperature));
        }
        let reply = self.client.post_json(&self.url, &wire_body(&self.model, request))?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?;
        let mut metadata = BTreeMap::new();
        if let Some(model) = reply.get("model") {
            metadata.insert("model".to_string(), model.clone());
        }
        if let Some(usage) = reply.get("usage") {
            metadata.insert("usage".to_string(), usage.clone());
        }
        Ok(ChatResponse {
            raw_text: text.to_string(),
            provider_metadata: metadata,
        }
        .into())
    }
}
