//! The five-phase extraction pipeline.
//!
//! Phases run strictly in order: README preprocessing (optional), actors,
//! high-level goals, low-level goals, API mapping (optional). Phases 2-4 go
//! through the generator-critic loop; the others are single generator calls.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::gateway::{
    parse_critique, parse_structured_output, ChatRequest, EndpointRole, Gateway, GatewayError, Message,
    ParseError, SchemaId, StructuredOutput,
};
use crate::model::{
    find_actor, validate_goal_model, Actor, ApiEndpoint, ApiMapping, Critique, Goal, GoalModel,
    ProjectDescription,
};
use crate::prompting::{PromptBuilder, PromptContext, PromptError, PromptPayload, PromptTask, ShotStrategy, Stage};

/// Follow-up turn sent once when a reply does not parse.
pub const REPROMPT: &str = "Return only valid JSON matching the schema";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Preprocess,
    Actors,
    HighLevel,
    LowLevel,
    ApiMapping,
}

impl From<Stage> for Phase {
    fn from(stage: Stage) -> Self {
        match stage {
            Stage::Actors => Phase::Actors,
            Stage::HighLevel => Phase::HighLevel,
            Stage::LowLevel => Phase::LowLevel,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Preprocess => "preprocess",
            Phase::Actors => "actors",
            Phase::HighLevel => "high_level",
            Phase::LowLevel => "low_level",
            Phase::ApiMapping => "api_mapping",
        })
    }
}

#[derive(Debug, Error)]
pub enum FailureReason {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{phase} phase failed: {reason}")]
    StageFailed { phase: Phase, reason: FailureReason },
}

impl OrchestratorError {
    fn stage(phase: Phase, reason: impl Into<FailureReason>) -> Self {
        OrchestratorError::StageFailed {
            phase,
            reason: reason.into(),
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match self {
            OrchestratorError::StageFailed { phase, .. } => Some(*phase),
            OrchestratorError::Precondition(_) => None,
        }
    }
}

/// Which iteration's output a loop keeps once it stops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepPolicy {
    #[default]
    Last,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub quality_threshold: f64,
    pub max_iterations: u32,
    pub strategy: ShotStrategy,
    pub critic_enabled: bool,
    pub keep: KeepPolicy,
    pub temperature: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            quality_threshold: 8.5,
            max_iterations: 3,
            strategy: ShotStrategy::ZeroShot,
            critic_enabled: true,
            keep: KeepPolicy::Last,
            temperature: 0.0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if !(0.0..=10.0).contains(&self.quality_threshold) {
            return Err(OrchestratorError::Precondition(format!(
                "quality_threshold {} outside [0, 10]",
                self.quality_threshold
            )));
        }
        if self.max_iterations < 1 {
            return Err(OrchestratorError::Precondition("max_iterations must be at least 1".into()));
        }
        if self.temperature != 0.0 {
            return Err(OrchestratorError::Precondition(format!(
                "temperature must be 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "items", rename_all = "snake_case")]
pub enum StageOutput {
    Actors(Vec<Actor>),
    HighLevel(Vec<Goal>),
    LowLevel(Vec<Goal>),
}

impl StageOutput {
    pub fn len(&self) -> usize {
        match self {
            StageOutput::Actors(a) => a.len(),
            StageOutput::HighLevel(g) | StageOutput::LowLevel(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// JSON shown to the critic, in the same shape the generator was asked for.
    pub fn to_candidate_json(&self) -> String {
        let value = match self {
            StageOutput::Actors(a) => json!(a
                .iter()
                .map(|a| json!({"name": a.name, "descr": a.description}))
                .collect::<Vec<_>>()),
            StageOutput::HighLevel(g) => json!(g
                .iter()
                .map(|g| json!({"actor": g.actor_ref, "text": g.text}))
                .collect::<Vec<_>>()),
            StageOutput::LowLevel(g) => json!(g
                .iter()
                .map(|g| json!({"parent": g.parent_ref, "text": g.text}))
                .collect::<Vec<_>>()),
        };
        value.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub output: StageOutput,
    pub iterations_used: u32,
    pub final_score: Option<f64>,
    pub converged: bool,
    pub critiques: Vec<Critique>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<DateTime<Utc>>,
}

/// Inputs available to a stage. Each stage reads only what its prompt needs.
#[derive(Debug, Clone, Default)]
pub struct StageContext {
    pub description: String,
    pub actors: Vec<Actor>,
    pub high_level: Vec<Goal>,
}

fn actors_json(actors: &[Actor]) -> String {
    json!(actors
        .iter()
        .map(|a| json!({"name": a.name, "descr": a.description}))
        .collect::<Vec<_>>())
    .to_string()
}

fn numbered_goals(goals: &[Goal]) -> String {
    json!(goals
        .iter()
        .enumerate()
        .map(|(i, g)| format!("[{i}] {}", g.text))
        .collect::<Vec<_>>())
    .to_string()
}

impl StageContext {
    fn prompt_context(&self, stage: Stage) -> PromptContext {
        let mut ctx = PromptContext::new();
        match stage {
            Stage::Actors => {
                ctx.insert("description".into(), self.description.clone());
            }
            Stage::HighLevel => {
                ctx.insert("description".into(), self.description.clone());
                ctx.insert("actors".into(), actors_json(&self.actors));
            }
            Stage::LowLevel => {
                ctx.insert("highLevelGoals".into(), numbered_goals(&self.high_level));
            }
        }
        ctx
    }

    fn critic_context(&self, stage: Stage) -> PromptContext {
        let mut ctx = self.prompt_context(stage);
        ctx.insert("description".into(), self.description.clone());
        ctx
    }
}

/// Everything a pipeline run produced, possibly up to a failed phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub description: Option<String>,
    pub preprocessed: bool,
    pub goal_model: GoalModel,
    pub stage_results: Vec<StageResult>,
    pub api_mappings: Vec<ApiMapping>,
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub error: OrchestratorError,
    pub partial: Box<RunOutput>,
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptBuilder,
    config: LoopConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptBuilder, config: LoopConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        Ok(Self {
            gateway,
            prompts,
            config,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    fn request(&self, role: EndpointRole, schema: SchemaId, messages: Vec<Message>) -> ChatRequest {
        let mut r = ChatRequest::new(role, schema, messages);
        r.temperature = self.config.temperature;
        r
    }

    /// Sends a generator prompt, re-prompting once if the reply does not
    /// parse or fails `check`.
    fn generate<T>(
        &self,
        phase: Phase,
        schema: SchemaId,
        payload: &PromptPayload,
        check: impl Fn(StructuredOutput) -> Result<T, ParseError>,
    ) -> Result<T, OrchestratorError> {
        let mut messages = vec![Message::system(&payload.system_text), Message::user(&payload.user_text)];
        let first = self
            .gateway
            .chat(&self.request(EndpointRole::Generator, schema, messages.clone()))
            .map_err(|e| OrchestratorError::stage(phase, e))?;
        let err = match parse_structured_output(&first.raw_text, schema).and_then(&check) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        log::warn!("{phase}: unparseable reply ({err}); re-prompting once");
        messages.push(Message::assistant(first.raw_text));
        messages.push(Message::user(REPROMPT));
        let second = self
            .gateway
            .chat(&self.request(EndpointRole::Generator, schema, messages))
            .map_err(|e| OrchestratorError::stage(phase, e))?;
        parse_structured_output(&second.raw_text, schema)
            .and_then(check)
            .map_err(|e| OrchestratorError::stage(phase, e))
    }

    /// Phase 1: turns a README into a prose description. No critic loop.
    pub fn preprocess_readme(&self, raw_readme: &str) -> Result<String, OrchestratorError> {
        if raw_readme.trim().is_empty() {
            return Err(OrchestratorError::Precondition("README is empty".into()));
        }
        let mut ctx = PromptContext::new();
        ctx.insert("readme".into(), raw_readme.to_string());
        let payload = self
            .prompts
            .build_prompt(PromptTask::Preprocess, ShotStrategy::ZeroShot, &ctx, None)
            .map_err(|e| OrchestratorError::stage(Phase::Preprocess, e))?;
        self.generate(Phase::Preprocess, SchemaId::Description, &payload, |out| match out {
            StructuredOutput::Description(d) => Ok(d),
            _ => unreachable!("description schema yields prose"),
        })
    }

    fn check_stage(stage: Stage, ctx: &StageContext, out: StructuredOutput) -> Result<StageOutput, ParseError> {
        let fail = |reason: String| ParseError::OutputParseFailure {
            schema: stage_schema(stage),
            reason,
        };
        match (stage, out) {
            (Stage::Actors, StructuredOutput::Actors(actors)) => {
                let mut unique: Vec<Actor> = Vec::with_capacity(actors.len());
                for actor in actors {
                    if find_actor(&unique, &actor.name).is_some() {
                        log::warn!("dropping duplicate actor {:?}", actor.name);
                    } else {
                        unique.push(actor);
                    }
                }
                Ok(StageOutput::Actors(unique))
            }
            (Stage::HighLevel, StructuredOutput::HighLevel(records)) => records
                .into_iter()
                .map(|r| {
                    let named = r.actor.unwrap_or_default();
                    let actor = find_actor(&ctx.actors, &named)
                        .ok_or_else(|| fail(format!("goal {:?} names unknown actor {named:?}", r.text)))?;
                    Ok(Goal::high(r.text, actor.name.clone()))
                })
                .collect::<Result<_, _>>()
                .map(StageOutput::HighLevel),
            (Stage::LowLevel, StructuredOutput::LowLevel(records)) => records
                .into_iter()
                .map(|r| {
                    let parent = r.parent.unwrap_or(usize::MAX);
                    if parent >= ctx.high_level.len() {
                        return Err(fail(format!(
                            "goal {:?} points at high-level goal {parent}, only {} exist",
                            r.text,
                            ctx.high_level.len()
                        )));
                    }
                    Ok(Goal::low(r.text, parent))
                })
                .collect::<Result<_, _>>()
                .map(StageOutput::LowLevel),
            (_, other) => Err(fail(format!("unexpected output {other:?}"))),
        }
    }

    fn critique(&self, stage: Stage, ctx: &StageContext, output: &StageOutput) -> Result<Critique, OrchestratorError> {
        if output.is_empty() {
            return Ok(Critique::new(0.0, "The previous response contained no items.").expect("in range"));
        }
        let payload = self
            .prompts
            .build_critic_prompt(stage, &ctx.critic_context(stage), &output.to_candidate_json())
            .map_err(|e| OrchestratorError::stage(stage.into(), e))?;
        let reply = self
            .gateway
            .chat(&self.request(
                EndpointRole::Critic,
                SchemaId::Critique,
                vec![Message::system(payload.system_text), Message::user(payload.user_text)],
            ))
            .map_err(|e| OrchestratorError::stage(stage.into(), e))?;
        Ok(parse_critique(&reply.raw_text).unwrap_or_else(|e| {
            log::warn!("{stage}: {e}; scoring the iteration 0");
            Critique {
                score: 0.0,
                comment: reply.raw_text,
            }
        }))
    }

    /// Generates, critiques and regenerates until the critic's score reaches
    /// the threshold or the iteration cap is hit.
    pub fn run_feedback_loop(&self, stage: Stage, ctx: &StageContext) -> Result<StageResult, OrchestratorError> {
        let prompt_ctx = ctx.prompt_context(stage);
        let schema = stage_schema(stage);
        let mut critiques: Vec<Critique> = Vec::new();
        let mut kept: Option<(StageOutput, Option<f64>)> = None;
        let mut iterations = 0;
        while iterations < self.config.max_iterations {
            iterations += 1;
            let payload = self
                .prompts
                .build_prompt(stage.into(), self.config.strategy, &prompt_ctx, critiques.last())
                .map_err(|e| OrchestratorError::stage(stage.into(), e))?;
            let output = self.generate(stage.into(), schema, &payload, |out| Self::check_stage(stage, ctx, out))?;
            if !self.config.critic_enabled {
                kept = Some((output, None));
                break;
            }
            let critique = self.critique(stage, ctx, &output)?;
            let score = critique.score;
            critiques.push(critique);
            let replace = match (&kept, self.config.keep) {
                (None, _) | (_, KeepPolicy::Last) => true,
                (Some((_, best)), KeepPolicy::Best) => best.is_none_or(|b| score >= b),
            };
            if replace {
                kept = Some((output, Some(score)));
            }
            if score >= self.config.quality_threshold {
                break;
            }
        }
        let (output, final_score) = kept.expect("at least one iteration ran");
        let converged = match final_score {
            None => true,
            Some(s) => s >= self.config.quality_threshold,
        };
        Ok(StageResult {
            stage,
            output,
            iterations_used: iterations,
            final_score,
            converged,
            critiques,
            completed_at: self.gateway.last_timestamp(),
        })
    }

    /// Phase 5: a single exploratory generator call. Mappings naming an
    /// endpoint outside the catalogue are dropped.
    pub fn map_goals_to_apis(
        &self,
        high_level: &[Goal],
        low_level: &[Goal],
        endpoints: &[ApiEndpoint],
    ) -> Result<Vec<ApiMapping>, OrchestratorError> {
        if low_level.is_empty() || endpoints.is_empty() {
            return Err(OrchestratorError::Precondition(
                "API mapping needs low-level goals and a non-empty endpoint catalogue".into(),
            ));
        }
        let goals: Vec<_> = low_level
            .iter()
            .map(|g| {
                let parent = g.parent_ref.and_then(|p| high_level.get(p)).map(|h| h.text.as_str());
                json!({"high_level_goal": parent.unwrap_or(""), "low_level_goal": g.text})
            })
            .collect();
        let mut ctx = PromptContext::new();
        ctx.insert("lowLevelGoals".into(), json!(goals).to_string());
        ctx.insert("endpoints".into(), serde_json::to_string(endpoints).expect("json"));
        let payload = self
            .prompts
            .build_prompt(PromptTask::ApiMapping, ShotStrategy::ZeroShot, &ctx, None)
            .map_err(|e| OrchestratorError::stage(Phase::ApiMapping, e))?;
        let mappings = self.generate(Phase::ApiMapping, SchemaId::ApiMappingList, &payload, |out| match out {
            StructuredOutput::ApiMappings(m) => Ok(m),
            _ => unreachable!("mapping schema yields mappings"),
        })?;
        Ok(mappings
            .into_iter()
            .filter(|m| {
                let known = endpoints.iter().any(|e| e.name == m.api_name);
                if !known {
                    log::warn!("dropping mapping to unknown endpoint {:?}", m.api_name);
                }
                known
            })
            .collect())
    }

    /// Runs every phase in order. `on_phase` is called with the outputs so
    /// far after each completed phase, so callers can persist partial runs.
    pub fn run_pipeline(
        &self,
        project: &ProjectDescription,
        endpoints: Option<&[ApiEndpoint]>,
        mut on_phase: impl FnMut(Phase, &RunOutput),
    ) -> Result<RunOutput, PipelineFailure> {
        let mut out = RunOutput {
            goal_model: GoalModel {
                project_id: project.project_id.clone(),
                ..GoalModel::default()
            },
            ..RunOutput::default()
        };
        macro_rules! attempt {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(error) => return Err(PipelineFailure { error, partial: Box::new(out) }),
                }
            };
        }
        attempt!(project
            .validate()
            .map_err(|e| OrchestratorError::Precondition(e.to_string())));

        let description = match &project.description {
            Some(d) => d.clone(),
            None => {
                let readme = project.raw_readme.as_deref().unwrap_or_default();
                let d = attempt!(self.preprocess_readme(readme));
                out.preprocessed = true;
                out.description = Some(d.clone());
                on_phase(Phase::Preprocess, &out);
                d
            }
        };
        out.description = Some(description.clone());

        let mut ctx = StageContext {
            description,
            ..StageContext::default()
        };
        for stage in Stage::ALL {
            let result = attempt!(self.run_feedback_loop(stage, &ctx));
            match &result.output {
                StageOutput::Actors(a) => {
                    ctx.actors = a.clone();
                    out.goal_model.actors = a.clone();
                }
                StageOutput::HighLevel(g) => {
                    ctx.high_level = g.clone();
                    out.goal_model.high_level = g.clone();
                }
                StageOutput::LowLevel(g) => out.goal_model.low_level = g.clone(),
            }
            out.stage_results.push(result);
            on_phase(stage.into(), &out);
        }
        debug_assert!(validate_goal_model(&out.goal_model).is_empty());

        if let Some(endpoints) = endpoints {
            if out.goal_model.low_level.is_empty() {
                log::warn!("no low-level goals to map; skipping API mapping");
            } else {
                out.api_mappings = attempt!(self.map_goals_to_apis(
                    &out.goal_model.high_level,
                    &out.goal_model.low_level,
                    endpoints
                ));
                on_phase(Phase::ApiMapping, &out);
            }
        }
        Ok(out)
    }
}

pub fn stage_schema(stage: Stage) -> SchemaId {
    match stage {
        Stage::Actors => SchemaId::ActorList,
        Stage::HighLevel => SchemaId::HighLevelGoalList,
        Stage::LowLevel => SchemaId::LowLevelGoalList,
    }
}
