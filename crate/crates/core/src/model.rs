//! Shared domain types: actors, goals, goal models, ground-truth datasets
//! and the API catalogue used by the mapping phase.
//!
//! Goal models and ground-truth datasets share one JSON shape:
//!
//! ```json
//! {"dataset_id": "...",
//!  "actors": [{"name": "...", "description": "..."}],
//!  "high_level": [{"text": "...", "actor": "..."}],
//!  "low_level": [{"text": "...", "parent": 0}]}
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version stamped into every persisted artifact.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error: {}", join_violations(.0))]
    Integrity(Vec<Violation>),
    #[error("invalid project description: {0}")]
    Project(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Input to a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectDescription {
    pub project_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_readme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl ProjectDescription {
    pub fn from_description(project_id: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            project_id: project_id.into(),
            raw_readme: None,
            description: Some(description.into()),
        }
    }

    pub fn from_readme(project_id: impl Into<String>, readme: impl Into<String>) -> Self {
        Self {
            project_id: project_id.into(),
            raw_readme: Some(readme.into()),
            description: None,
        }
    }

    /// The README preprocessing phase runs iff no description is available.
    pub fn needs_preprocessing(&self) -> bool {
        self.description.is_none()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.project_id.trim().is_empty() {
            return Err(ModelError::Project("project_id is empty".into()));
        }
        match (&self.description, &self.raw_readme) {
            (Some(d), _) if d.trim().is_empty() => {
                Err(ModelError::Project("description is empty".into()))
            }
            (Some(_), _) => Ok(()),
            (None, Some(r)) if !r.trim().is_empty() => Ok(()),
            (None, _) => Err(ModelError::Project(
                "neither a description nor a README was supplied".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub name: String,
    #[serde(default, alias = "descr")]
    pub description: String,
}

impl Actor {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalLevel {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub text: String,
    pub level: GoalLevel,
    /// Owning actor; required for high-level goals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_ref: Option<String>,
    /// Index into the high-level goal list; required for low-level goals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_ref: Option<usize>,
}

impl Goal {
    pub fn high(text: impl Into<String>, actor: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            level: GoalLevel::High,
            actor_ref: Some(actor.into()),
            parent_ref: None,
        }
    }

    pub fn low(text: impl Into<String>, parent: usize) -> Self {
        Self {
            text: text.into(),
            level: GoalLevel::Low,
            actor_ref: None,
            parent_ref: Some(parent),
        }
    }
}

/// One broken invariant found by [`validate_goal_model`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyActorName { index: usize },
    DuplicateActorName { name: String },
    EmptyGoalText { level: GoalLevel, index: usize },
    WrongLevel { expected: GoalLevel, index: usize },
    MissingActorRef { index: usize },
    UnknownActor { index: usize, actor: String },
    MissingParentRef { index: usize },
    DanglingParentRef { index: usize, parent: usize, available: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyActorName { index } => write!(f, "empty actor name at index {index}"),
            Violation::DuplicateActorName { name } => write!(f, "duplicate actor name {name:?}"),
            Violation::EmptyGoalText { level, index } => {
                write!(f, "empty goal text ({level:?} goal {index})")
            }
            Violation::WrongLevel { expected, index } => {
                write!(f, "wrong goal level at index {index}, expected {expected:?}")
            }
            Violation::MissingActorRef { index } => {
                write!(f, "missing actor_ref on high-level goal {index}")
            }
            Violation::UnknownActor { index, actor } => {
                write!(f, "unknown actor {actor:?} on high-level goal {index}")
            }
            Violation::MissingParentRef { index } => {
                write!(f, "missing parent_ref on low-level goal {index}")
            }
            Violation::DanglingParentRef { index, parent, available } => write!(
                f,
                "dangling parent_ref: low-level goal {index} points at {parent} but only {available} high-level goals exist"
            ),
        }
    }
}

/// Looks up an actor by case-insensitive name.
pub fn find_actor<'a>(actors: &'a [Actor], name: &str) -> Option<&'a Actor> {
    let needle = name.trim().to_lowercase();
    actors.iter().find(|a| a.name.trim().to_lowercase() == needle)
}

fn check_integrity(actors: &[Actor], high: &[Goal], low: &[Goal]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (index, actor) in actors.iter().enumerate() {
        let key = actor.name.trim().to_lowercase();
        if key.is_empty() {
            out.push(Violation::EmptyActorName { index });
        } else if !seen.insert(key) {
            out.push(Violation::DuplicateActorName {
                name: actor.name.clone(),
            });
        }
    }
    for (index, goal) in high.iter().enumerate() {
        if goal.level != GoalLevel::High {
            out.push(Violation::WrongLevel {
                expected: GoalLevel::High,
                index,
            });
        }
        if goal.text.trim().is_empty() {
            out.push(Violation::EmptyGoalText {
                level: GoalLevel::High,
                index,
            });
        }
        match &goal.actor_ref {
            None => out.push(Violation::MissingActorRef { index }),
            Some(a) if find_actor(actors, a).is_none() => out.push(Violation::UnknownActor {
                index,
                actor: a.clone(),
            }),
            Some(_) => {}
        }
    }
    for (index, goal) in low.iter().enumerate() {
        if goal.level != GoalLevel::Low {
            out.push(Violation::WrongLevel {
                expected: GoalLevel::Low,
                index,
            });
        }
        if goal.text.trim().is_empty() {
            out.push(Violation::EmptyGoalText {
                level: GoalLevel::Low,
                index,
            });
        }
        match goal.parent_ref {
            None => out.push(Violation::MissingParentRef { index }),
            Some(parent) if parent >= high.len() => out.push(Violation::DanglingParentRef {
                index,
                parent,
                available: high.len(),
            }),
            Some(_) => {}
        }
    }
    out
}

/// Cumulative output of phases 2-4 of a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoalModel {
    pub project_id: String,
    pub actors: Vec<Actor>,
    pub high_level: Vec<Goal>,
    pub low_level: Vec<Goal>,
}

/// Returns one entry per violated invariant; empty iff the model is sound.
pub fn validate_goal_model(model: &GoalModel) -> Vec<Violation> {
    check_integrity(&model.actors, &model.high_level, &model.low_level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationCounts {
    pub actors: usize,
    pub high_level: usize,
    pub low_level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthDataset {
    pub dataset_id: String,
    pub actors: Vec<Actor>,
    pub high_level: Vec<Goal>,
    pub low_level: Vec<Goal>,
}

impl GroundTruthDataset {
    pub fn counts(&self) -> AnnotationCounts {
        AnnotationCounts {
            actors: self.actors.len(),
            high_level: self.high_level.len(),
            low_level: self.low_level.len(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = GoalDocument {
            schema_version: Some(SCHEMA_VERSION),
            dataset_id: Some(self.dataset_id.clone()),
            project_id: None,
            actors: self.actors.clone(),
            high_level: self.high_level.iter().map(HighLevelRecord::from).collect(),
            low_level: self.low_level.iter().map(LowLevelRecord::from).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("dataset serialises")
    }

    /// View the annotations as a goal model, e.g. to script a mock run.
    pub fn as_goal_model(&self, project_id: &str) -> GoalModel {
        GoalModel {
            project_id: project_id.to_string(),
            actors: self.actors.clone(),
            high_level: self.high_level.clone(),
            low_level: self.low_level.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighLevelRecord {
    pub text: String,
    #[serde(default)]
    pub actor: Option<String>,
}

impl From<&Goal> for HighLevelRecord {
    fn from(g: &Goal) -> Self {
        Self {
            text: g.text.clone(),
            actor: g.actor_ref.clone(),
        }
    }
}

impl From<HighLevelRecord> for Goal {
    fn from(r: HighLevelRecord) -> Self {
        Goal {
            text: r.text,
            level: GoalLevel::High,
            actor_ref: r.actor,
            parent_ref: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowLevelRecord {
    pub text: String,
    #[serde(default)]
    pub parent: Option<usize>,
}

impl From<&Goal> for LowLevelRecord {
    fn from(g: &Goal) -> Self {
        Self {
            text: g.text.clone(),
            parent: g.parent_ref,
        }
    }
}

impl From<LowLevelRecord> for Goal {
    fn from(r: LowLevelRecord) -> Self {
        Goal {
            text: r.text,
            level: GoalLevel::Low,
            actor_ref: None,
            parent_ref: r.parent,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GoalDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    project_id: Option<String>,
    actors: Vec<Actor>,
    high_level: Vec<HighLevelRecord>,
    low_level: Vec<LowLevelRecord>,
}

/// Parses and validates a ground-truth document.
pub fn parse_ground_truth(bytes: &[u8]) -> Result<GroundTruthDataset, ModelError> {
    let doc: GoalDocument =
        serde_json::from_slice(bytes).map_err(|e| ModelError::Schema(e.to_string()))?;
    if let Some(v) = doc.schema_version {
        if v > SCHEMA_VERSION {
            return Err(ModelError::Schema(format!("unsupported schema_version {v}")));
        }
    }
    let dataset_id = doc
        .dataset_id
        .filter(|d| !d.trim().is_empty())
        .ok_or_else(|| ModelError::Schema("dataset_id missing or empty".into()))?;
    for (field, len) in [
        ("actors", doc.actors.len()),
        ("high_level", doc.high_level.len()),
        ("low_level", doc.low_level.len()),
    ] {
        if len == 0 {
            return Err(ModelError::Schema(format!("{field} must not be empty")));
        }
    }
    let dataset = GroundTruthDataset {
        dataset_id,
        actors: doc.actors,
        high_level: doc.high_level.into_iter().map(Goal::from).collect(),
        low_level: doc.low_level.into_iter().map(Goal::from).collect(),
    };
    let violations = check_integrity(&dataset.actors, &dataset.high_level, &dataset.low_level);
    if !violations.is_empty() {
        return Err(ModelError::Integrity(violations));
    }
    Ok(dataset)
}

/// Critic verdict on one generated stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    /// On a 0-10 scale.
    pub score: f64,
    #[serde(default)]
    pub comment: String,
}

impl Critique {
    pub fn new(score: f64, comment: impl Into<String>) -> Option<Self> {
        (score.is_finite() && (0.0..=10.0).contains(&score)).then(|| Self {
            score,
            comment: comment.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiEndpoint {
    pub name: String,
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMapping {
    pub high_level_goal: String,
    pub low_level_goal: String,
    pub api_name: String,
}

pub fn parse_api_catalogue(bytes: &[u8]) -> Result<Vec<ApiEndpoint>, ModelError> {
    serde_json::from_slice(bytes).map_err(|e| ModelError::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GoalModel {
        GoalModel {
            project_id: "p".into(),
            actors: vec![Actor::new("Citizens", "residents"), Actor::new("Admin", "")],
            high_level: vec![
                Goal::high("Report issues", "Citizens"),
                Goal::high("Configure categories", "Admin"),
                Goal::high("Follow reports", "citizens"),
            ],
            low_level: vec![Goal::low("Select a location", 0)],
        }
    }

    #[test]
    fn sound_model_has_no_violations() {
        assert!(validate_goal_model(&model()).is_empty());
    }

    #[test]
    fn dangling_parent_is_reported() {
        let mut m = model();
        m.low_level.push(Goal::low("Orphan", 7));
        let v = validate_goal_model(&m);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("dangling parent_ref"));
    }

    #[test]
    fn actor_names_are_unique_case_insensitively() {
        let mut m = model();
        m.actors.push(Actor::new("admin", "dup"));
        let v = validate_goal_model(&m);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("duplicate actor name"));
    }

    #[test]
    fn unknown_actor_and_missing_refs() {
        let mut m = model();
        m.high_level.push(Goal::high("x", "Nobody"));
        m.high_level.push(Goal {
            actor_ref: None,
            ..Goal::high("y", "")
        });
        m.low_level.push(Goal {
            parent_ref: None,
            ..Goal::low("z", 0)
        });
        let v = validate_goal_model(&m);
        assert!(matches!(v[0], Violation::UnknownActor { .. }));
        assert!(matches!(v[1], Violation::MissingActorRef { .. }));
        assert!(matches!(v[2], Violation::MissingParentRef { .. }));
    }

    #[test]
    fn missing_parent_is_an_integrity_error() {
        let doc = br#"{"dataset_id":"d","actors":[{"name":"A","description":""}],
            "high_level":[{"text":"h","actor":"A"}],"low_level":[{"text":"l"}]}"#;
        assert!(matches!(parse_ground_truth(doc), Err(ModelError::Integrity(_))));
    }

    #[test]
    fn zero_actors_is_a_schema_error() {
        let doc = br#"{"dataset_id":"d","actors":[],
            "high_level":[{"text":"h","actor":"A"}],"low_level":[{"text":"l","parent":0}]}"#;
        assert!(matches!(parse_ground_truth(doc), Err(ModelError::Schema(_))));
    }

    #[test]
    fn malformed_document_is_a_schema_error() {
        assert!(matches!(parse_ground_truth(b"{not json"), Err(ModelError::Schema(_))));
        assert!(matches!(
            parse_ground_truth(br#"{"dataset_id":"d","actors":"x","high_level":[],"low_level":[]}"#),
            Err(ModelError::Schema(_))
        ));
    }

    #[test]
    fn descr_alias_is_accepted() {
        let a: Actor = serde_json::from_str(r#"{"name":"Citizens","descr":"residents"}"#).unwrap();
        assert_eq!(a.description, "residents");
    }

    #[test]
    fn project_description_validation() {
        assert!(ProjectDescription::from_description("p", "  ").validate().is_err());
        assert!(ProjectDescription::from_readme("p", "# Readme").validate().is_ok());
        assert!(ProjectDescription::from_readme("p", "# Readme").needs_preprocessing());
        assert!(!ProjectDescription::from_description("p", "d").needs_preprocessing());
        let none = ProjectDescription {
            project_id: "p".into(),
            raw_readme: None,
            description: None,
        };
        assert!(none.validate().is_err());
    }
}
