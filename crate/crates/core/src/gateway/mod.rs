//! Single point of contact with chat-completion providers.
//!
//! Every request passes through [`Gateway::chat`], which rejects non-zero
//! temperatures and appends the exchange to the run transcript. Providers
//! are live HTTP endpoints, scripted mocks or a recorded transcript.

mod http;
pub mod mock;
mod structured;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClient, OpenAiProvider, ProviderConfig, RetryPolicy};
pub use structured::{parse_critique, parse_structured_output, ParseError, StructuredOutput};
pub use transcript::{request_digest, ReplayProvider, Transcript, TranscriptEntry};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("provider returned HTTP {status}: {body}")]
    ProviderStatus { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("no recorded {role} response for digest {digest}")]
    ReplayMiss { role: EndpointRole, digest: String },
    #[error("temperature must be 0, got {0}")]
    NonZeroTemperature(f64),
    #[error("no provider configured for the {0} role")]
    NotConfigured(EndpointRole),
    #[error("scripted provider exhausted for the {0} role")]
    ScriptExhausted(EndpointRole),
    #[error("transcript error: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointRole {
    Generator,
    Critic,
}

impl fmt::Display for EndpointRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointRole::Generator => "generator",
            EndpointRole::Critic => "critic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageRole::System => "system",
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

/// Expected shape of a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    /// Free prose, used by README preprocessing.
    Description,
    ActorList,
    HighLevelGoalList,
    LowLevelGoalList,
    Critique,
    ApiMappingList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub endpoint_role: EndpointRole,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub response_schema_id: SchemaId,
}

impl ChatRequest {
    /// A deterministic (temperature 0) request.
    pub fn new(role: EndpointRole, schema: SchemaId, messages: Vec<Message>) -> Self {
        Self {
            endpoint_role: role,
            messages,
            temperature: 0.0,
            response_schema_id: schema,
        }
    }

    pub fn digest(&self) -> String {
        request_digest(self.endpoint_role, &self.messages)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub raw_text: String,
    #[serde(default)]
    pub provider_metadata: BTreeMap<String, serde_json::Value>,
}

impl ChatResponse {
    pub fn text(raw: impl Into<String>) -> Self {
        Self {
            raw_text: raw.into(),
            provider_metadata: BTreeMap::new(),
        }
    }
}

/// What a provider hands back: the response and, for replayed entries, the
/// time it was originally recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub response: ChatResponse,
    pub recorded_at: Option<DateTime<Utc>>,
}

impl From<ChatResponse> for Completion {
    fn from(response: ChatResponse) -> Self {
        Self {
            response,
            recorded_at: None,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct Gateway {
    generator: Arc<dyn ChatProvider>,
    critic: Option<Arc<dyn ChatProvider>>,
    transcript: Mutex<Transcript>,
    clock: Clock,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("has_critic", &self.critic.is_some())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        run_id: impl Into<String>,
        generator: Arc<dyn ChatProvider>,
        critic: Option<Arc<dyn ChatProvider>>,
    ) -> Self {
        Self {
            generator,
            critic,
            transcript: Mutex::new(Transcript::new(run_id)),
            clock: Arc::new(Utc::now),
        }
    }

    /// Serves both roles from a recorded transcript.
    pub fn replay(run_id: impl Into<String>, recorded: &Transcript) -> Self {
        let provider: Arc<dyn ChatProvider> = Arc::new(ReplayProvider::new(recorded));
        Self::new(run_id, provider.clone(), Some(provider))
    }

    /// Overrides the wall clock used to stamp new entries.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.temperature != 0.0 {
            return Err(GatewayError::NonZeroTemperature(request.temperature));
        }
        let provider = match request.endpoint_role {
            EndpointRole::Generator => &self.generator,
            EndpointRole::Critic => self
                .critic
                .as_ref()
                .ok_or(GatewayError::NotConfigured(EndpointRole::Critic))?,
        };
        let completion = provider.complete(request)?;
        if completion.response.raw_text.trim().is_empty() {
            return Err(GatewayError::MalformedResponse("empty completion".into()));
        }
        let timestamp = completion.recorded_at.unwrap_or_else(|| (self.clock)());
        self.transcript
            .lock()
            .expect("transcript lock poisoned")
            .append(request.clone(), completion.response.clone(), timestamp);
        Ok(completion.response)
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock poisoned").clone()
    }

    pub fn calls(&self, role: EndpointRole) -> usize {
        self.transcript
            .lock()
            .expect("transcript lock poisoned")
            .count_role(role)
    }

    /// Timestamp of the most recent exchange, if any.
    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.transcript
            .lock()
            .expect("transcript lock poisoned")
            .entries
            .last()
            .map(|e| e.timestamp)
    }
}

#[cfg(test)]
mod tests {
    use super::mock::ScriptedProvider;
    use super::*;

    fn req(role: EndpointRole, text: &str) -> ChatRequest {
        ChatRequest::new(role, SchemaId::Description, vec![Message::user(text)])
    }

    #[test]
    fn rejects_non_zero_temperature_before_sending() {
        let provider = Arc::new(ScriptedProvider::new(["never"]));
        let gw = Gateway::new("r", provider.clone(), None);
        let mut r = req(EndpointRole::Generator, "hi");
        r.temperature = 0.7;
        assert!(matches!(gw.chat(&r), Err(GatewayError::NonZeroTemperature(t)) if t == 0.7));
        assert_eq!(provider.calls(), 0);
        assert!(gw.transcript().entries.is_empty());
    }

    #[test]
    fn records_every_exchange() {
        let gw = Gateway::new("r", Arc::new(ScriptedProvider::new(["a", "b"])), None);
        gw.chat(&req(EndpointRole::Generator, "1")).unwrap();
        gw.chat(&req(EndpointRole::Generator, "2")).unwrap();
        let t = gw.transcript();
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.entries[1].response.raw_text, "b");
        assert_eq!(t.entries[1].seq, 1);
        assert!(matches!(
            gw.chat(&req(EndpointRole::Critic, "x")),
            Err(GatewayError::NotConfigured(EndpointRole::Critic))
        ));
    }

    #[test]
    fn replay_returns_recorded_response_verbatim() {
        let gw = Gateway::new(
            "r",
            Arc::new(ScriptedProvider::new(["generated"])),
            Some(Arc::new(ScriptedProvider::new(["criticised"]))),
        );
        gw.chat(&req(EndpointRole::Generator, "q")).unwrap();
        gw.chat(&req(EndpointRole::Critic, "q")).unwrap();
        let recorded = gw.transcript();

        let replay = Gateway::replay("r2", &recorded);
        assert_eq!(
            replay.chat(&req(EndpointRole::Critic, "q")).unwrap().raw_text,
            "criticised"
        );
        assert_eq!(
            replay.chat(&req(EndpointRole::Generator, "q")).unwrap().raw_text,
            "generated"
        );
        let err = replay.chat(&req(EndpointRole::Generator, "other")).unwrap_err();
        assert!(matches!(err, GatewayError::ReplayMiss { .. }));
        let again = replay.transcript();
        assert_eq!(again.entries[0].timestamp, recorded.entries[1].timestamp);
    }
}
