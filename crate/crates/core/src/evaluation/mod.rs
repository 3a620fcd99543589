//! Semantic evaluation of a goal model against a ground-truth dataset.
//!
//! Texts are preprocessed (goal texts only), embedded, compared pairwise
//! with cosine similarity and paired by maximum-weight bipartite matching.
//! Precision, recall and F1 are computed from the matched similarity mass.

pub mod embed;
pub mod matching;
pub mod metrics;
pub mod preprocess;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GoalModel, GroundTruthDataset, SCHEMA_VERSION};
use crate::prompting::{ShotStrategy, Stage};

pub use embed::{cosine, embed, Embedder, EmbeddingSet, EmbeddingVector, HashingEmbedder, HttpEmbedder, Side, HASHING_DIMENSION};
pub use matching::{max_weight_matching, similarity_matrix, MatchArc, MatchingResult, SimilarityMatrix};
pub use metrics::{compute_metrics, MetricConvention, TaskMetrics};
pub use preprocess::{Preprocessor, TextKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero embedding vector for {0:?}")]
    ZeroVector(String),
    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
}

/// Metrics and matching provenance for one task of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task: Stage,
    pub metrics: TaskMetrics,
    pub generated: Vec<String>,
    pub reference: Vec<String>,
    pub matching: MatchingResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub struct Evaluator<'a> {
    pub preprocessor: &'a Preprocessor,
    pub backend: &'a dyn Embedder,
    pub convention: MetricConvention,
}

impl Evaluator<'_> {
    /// Evaluates one list of generated texts against one list of references.
    pub fn evaluate_task(
        &self,
        task: Stage,
        generated: Vec<String>,
        reference: Vec<String>,
    ) -> Result<TaskEvaluation, EvalError> {
        let kind = match task {
            Stage::Actors => TextKind::ActorName,
            Stage::HighLevel | Stage::LowLevel => TextKind::GoalText,
        };
        let x = embed(&generated, Side::Generated, kind, self.preprocessor, self.backend)?;
        let y = embed(&reference, Side::Reference, kind, self.preprocessor, self.backend)?;
        let matrix = if x.is_empty() || y.is_empty() {
            SimilarityMatrix::empty(x.len(), y.len())
        } else {
            similarity_matrix(&x, &y)?
        };
        let matching = max_weight_matching(&matrix);
        let mut warnings = Vec::new();
        if generated.is_empty() {
            warnings.push(format!("no generated {task} items; metrics set to 0"));
        }
        if reference.is_empty() {
            warnings.push(format!("no reference {task} items; metrics set to 0"));
        }
        let metrics = compute_metrics(&matching, generated.len(), reference.len(), self.convention);
        Ok(TaskEvaluation {
            task,
            metrics,
            generated,
            reference,
            matching,
            warnings,
        })
    }

    /// Actors are compared by name, goals by text; the two goal levels are
    /// evaluated independently and parent links are ignored.
    pub fn evaluate_run(
        &self,
        model: &GoalModel,
        truth: &GroundTruthDataset,
    ) -> Result<Vec<TaskEvaluation>, EvalError> {
        let names = |actors: &[crate::model::Actor]| actors.iter().map(|a| a.name.clone()).collect::<Vec<_>>();
        let texts = |goals: &[crate::model::Goal]| goals.iter().map(|g| g.text.clone()).collect::<Vec<_>>();
        Ok(vec![
            self.evaluate_task(Stage::Actors, names(&model.actors), names(&truth.actors))?,
            self.evaluate_task(Stage::HighLevel, texts(&model.high_level), texts(&truth.high_level))?,
            self.evaluate_task(Stage::LowLevel, texts(&model.low_level), texts(&truth.low_level))?,
        ])
    }
}

/// One (dataset, task, strategy, critic) cell of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub dataset_id: String,
    pub strategy: ShotStrategy,
    pub critic_enabled: bool,
    #[serde(flatten)]
    pub evaluation: TaskEvaluation,
}

impl EvalCell {
    pub fn key(&self) -> (String, Stage, ShotStrategy) {
        (self.dataset_id.clone(), self.evaluation.task, self.strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metric_convention: MetricConvention,
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    /// Sorts the cells; two cells for the same (dataset, task, strategy,
    /// critic) combination are rejected.
    pub fn new(convention: MetricConvention, mut cells: Vec<EvalCell>) -> Result<Self, EvalError> {
        cells.sort_by(|a, b| {
            (&a.dataset_id, a.evaluation.task, a.strategy, a.critic_enabled).cmp(&(
                &b.dataset_id,
                b.evaluation.task,
                b.strategy,
                b.critic_enabled,
            ))
        });
        if let Some(dup) = cells
            .windows(2)
            .find(|w| w[0].key() == w[1].key() && w[0].critic_enabled == w[1].critic_enabled)
        {
            let (dataset, task, strategy) = dup[0].key();
            return Err(EvalError::InvalidReport(format!(
                "duplicate cell {dataset}/{task}/{}",
                strategy.short()
            )));
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            metric_convention: convention,
            cells,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let report: Self = serde_json::from_str(text).map_err(|e| EvalError::InvalidReport(e.to_string()))?;
        if report.schema_version > SCHEMA_VERSION {
            return Err(EvalError::InvalidReport(format!(
                "unsupported schema_version {}",
                report.schema_version
            )));
        }
        Self::new(report.metric_convention, report.cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Actor, Goal};

    fn truth() -> GroundTruthDataset {
        GroundTruthDataset {
            dataset_id: "d".into(),
            actors: vec![Actor::new("Citizens", ""), Actor::new("Administrators", "")],
            high_level: vec![
                Goal::high("Citizens submit reports on a map", "Citizens"),
                Goal::high("Administrators configure auto-assignment", "Administrators"),
            ],
            low_level: vec![Goal::low("Select the location", 0), Goal::low("Attach photos", 0)],
        }
    }

    fn evaluator<'a>(p: &'a Preprocessor, e: &'a HashingEmbedder) -> Evaluator<'a> {
        Evaluator {
            preprocessor: p,
            backend: e,
            convention: MetricConvention::ReferencePrecision,
        }
    }

    #[test]
    fn self_match_scores_one() {
        let (p, e) = (Preprocessor::default(), HashingEmbedder::default());
        let t = truth();
        let rows = evaluator(&p, &e).evaluate_run(&t.as_goal_model("d"), &t).unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            assert!((row.metrics.f1 - 1.0).abs() < 1e-9, "{:?}", row.task);
            assert!(row.warnings.is_empty());
        }
    }

    #[test]
    fn extra_actor_lowers_recall_under_reference_precision() {
        let (p, e) = (Preprocessor::default(), HashingEmbedder::default());
        let t = truth();
        let mut m = t.as_goal_model("d");
        m.actors.push(Actor::new("Municipal Operators", ""));
        let rows = evaluator(&p, &e).evaluate_run(&m, &t).unwrap();
        let actors = &rows[0];
        // Both references match themselves (similarity 1), so R = 2/3, P = 2/2.
        assert!((actors.metrics.recall - 2.0 / 3.0).abs() < 1e-9);
        assert!((actors.metrics.precision - 1.0).abs() < 1e-9);
        assert_eq!(actors.matching.unmatched_generated, vec![2]);
    }

    #[test]
    fn empty_model_yields_zeros_with_warnings() {
        let (p, e) = (Preprocessor::default(), HashingEmbedder::default());
        let rows = evaluator(&p, &e).evaluate_run(&GoalModel::default(), &truth()).unwrap();
        for row in rows {
            assert_eq!(row.metrics, TaskMetrics::ZERO);
            assert_eq!(row.warnings.len(), 1);
        }
    }

    #[test]
    fn actor_names_are_not_preprocessed() {
        let (p, e) = (Preprocessor::default(), HashingEmbedder::default());
        let row = evaluator(&p, &e)
            .evaluate_task(Stage::Actors, vec!["The Admins".into()], vec!["The Admins".into()])
            .unwrap();
        assert!((row.metrics.f1 - 1.0).abs() < 1e-9);
    }
}
