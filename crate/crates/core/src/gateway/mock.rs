//! Offline providers for tests, demos and dry runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde_json::json;

use super::{ChatProvider, ChatRequest, ChatResponse, Completion, EndpointRole, GatewayError, SchemaId};
use crate::model::{ApiMapping, GoalModel};

/// Replies with a fixed sequence of texts, in order.
pub struct ScriptedProvider {
    role: EndpointRole,
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            role: EndpointRole::Generator,
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// A critic replying with JSON critiques carrying `scores`.
    pub fn critic_scores(scores: &[f64]) -> Self {
        let mut p = Self::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, s)| json!({"score": s, "comment": format!("critique {} (score {s})", i + 1)}).to_string()),
        );
        p.role = EndpointRole::Critic;
        p
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().expect("lock").len()
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("lock").clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        self.seen.lock().expect("lock").push(request.clone());
        self.replies
            .lock()
            .expect("lock")
            .pop_front()
            .map(|t| ChatResponse::text(t).into())
            .ok_or(GatewayError::ScriptExhausted(self.role))
    }
}

/// Delegates to a closure; handy for replies that depend on the request.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        (self.0)(request).map(|t| ChatResponse::text(t).into())
    }
}

/// Emits a fixed goal model, stage by stage, keyed on the requested schema.
/// Critic requests receive a constant score.
pub struct FixtureProvider {
    description: String,
    actors: String,
    high_level: String,
    low_level: String,
    mappings: String,
    critic_score: f64,
}

impl FixtureProvider {
    pub fn new(model: &GoalModel, description: &str, mappings: &[ApiMapping], critic_score: f64) -> Self {
        let actors: Vec<_> = model
            .actors
            .iter()
            .map(|a| json!({"name": a.name, "descr": a.description}))
            .collect();
        let high: Vec<_> = model
            .high_level
            .iter()
            .map(|g| json!({"actor": g.actor_ref, "text": g.text}))
            .collect();
        let low: Vec<_> = model
            .low_level
            .iter()
            .map(|g| json!({"parent": g.parent_ref, "text": g.text}))
            .collect();
        Self {
            description: description.to_string(),
            actors: serde_json::to_string(&actors).expect("json"),
            high_level: serde_json::to_string(&high).expect("json"),
            low_level: serde_json::to_string(&low).expect("json"),
            mappings: serde_json::to_string(mappings).expect("json"),
            critic_score,
        }
    }
}

impl ChatProvider for FixtureProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let text = match (request.endpoint_role, request.response_schema_id) {
            (EndpointRole::Critic, _) | (_, SchemaId::Critique) => {
                json!({"score": self.critic_score, "comment": "Consistent with the description."}).to_string()
            }
            (_, SchemaId::Description) => self.description.clone(),
            (_, SchemaId::ActorList) => self.actors.clone(),
            (_, SchemaId::HighLevelGoalList) => self.high_level.clone(),
            (_, SchemaId::LowLevelGoalList) => self.low_level.clone(),
            (_, SchemaId::ApiMappingList) => self.mappings.clone(),
        };
        Ok(ChatResponse::text(text).into())
    }
}
