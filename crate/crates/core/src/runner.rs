//! Executing one pipeline run and persisting its artifacts.
//!
//! A run directory holds `manifest.json`, `goal_model.json`,
//! `api_mappings.json`, `transcript.jsonl` and `stage_results.json`. Each
//! file carries a `schema_version`. Artifacts are rewritten after every
//! completed phase, so a failed run still leaves the earlier phases on disk.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ProviderSpec, RunConfig};
use crate::datasets::Dataset;
use crate::gateway::mock::FixtureProvider;
use crate::gateway::{ChatProvider, Gateway, Transcript};
use crate::evaluation::{EvalCell, EvalError, Evaluator};
use crate::model::{Actor, ApiMapping, Goal, GoalModel, GroundTruthDataset, SCHEMA_VERSION};
use crate::orchestrator::{KeepPolicy, LoopConfig, Phase, Pipeline, RunOutput, StageResult};
use crate::prompting::{PromptBuilder, ShotStrategy, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GOAL_MODEL_FILE: &str = "goal_model.json";
pub const API_MAPPINGS_FILE: &str = "api_mappings.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const STAGE_RESULTS_FILE: &str = "stage_results.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("run {} failed: {message}", manifest.run_id)]
    Stage { manifest: Box<RunManifest>, message: String },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io { .. } | RunError::Stage { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProvenance {
    pub stage: Stage,
    pub iterations_used: u32,
    pub final_score: Option<f64>,
    pub converged: bool,
    pub completed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: ShotStrategy,
    pub critic_enabled: bool,
    pub keep: KeepPolicy,
    pub quality_threshold: f64,
    pub max_iterations: u32,
    pub description_preprocessed: bool,
    pub stages: Vec<StageProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalModelFile {
    pub schema_version: u32,
    pub project_id: String,
    pub actors: Vec<Actor>,
    pub high_level: Vec<Goal>,
    pub low_level: Vec<Goal>,
    pub provenance: Provenance,
}

impl GoalModelFile {
    pub fn goal_model(&self) -> GoalModel {
        GoalModel {
            project_id: self.project_id.clone(),
            actors: self.actors.clone(),
            high_level: self.high_level.clone(),
            low_level: self.low_level.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiMappingsFile {
    pub schema_version: u32,
    pub project_id: String,
    pub mappings: Vec<ApiMapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResultsFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub results: Vec<StageResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed { phase: Option<Phase>, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub goal_model: String,
    pub api_mappings: String,
    pub transcript: String,
    pub stage_results: String,
}

impl Default for ArtifactPaths {
    fn default() -> Self {
        Self {
            goal_model: GOAL_MODEL_FILE.into(),
            api_mappings: API_MAPPINGS_FILE.into(),
            transcript: TRANSCRIPT_FILE.into(),
            stage_results: STAGE_RESULTS_FILE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub dataset_id: String,
    pub strategy: ShotStrategy,
    pub critic_enabled: bool,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replayed_from: Option<String>,
    /// File names relative to the run directory.
    pub artifacts: ArtifactPaths,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        read_json(&run_dir.join(MANIFEST_FILE))
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::Io {
        context: format!("parsing {}", path.display()),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serialises");
    text.push('\n');
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

/// `<dataset>-<zs|os|fs>-<critic|nocritic>`.
pub fn run_prefix(dataset_id: &str, config: &LoopConfig) -> String {
    format!(
        "{dataset_id}-{}-{}",
        config.strategy.short().to_lowercase(),
        if config.critic_enabled { "critic" } else { "nocritic" }
    )
}

/// Creates the first free `<prefix>-NNN` directory under `root`. Directory
/// creation is the reservation, so concurrent callers never share an id.
pub fn allocate_run_dir(root: &Path, prefix: &str) -> Result<(String, PathBuf), RunError> {
    fs::create_dir_all(root).map_err(io_err(format!("creating {}", root.display())))?;
    for n in 1.. {
        let run_id = format!("{prefix}-{n:03}");
        let dir = root.join(&run_id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((run_id, dir)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(format!("creating {}", dir.display()))(e)),
        }
    }
    unreachable!()
}

pub struct RunRequest<'a> {
    pub config: &'a RunConfig,
    pub loop_config: LoopConfig,
    pub dataset: &'a Dataset,
    pub out_root: &'a Path,
    pub replay: Option<&'a Transcript>,
    /// Extra location to copy the transcript to.
    pub record: Option<&'a Path>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    pub output: RunOutput,
}

fn provider_for(spec: &ProviderSpec, dataset: &Dataset) -> Arc<dyn ChatProvider> {
    match spec {
        ProviderSpec::Fixture { critic_score } => Arc::new(FixtureProvider::new(
            &dataset.truth.as_goal_model(&dataset.id),
            dataset.description.as_deref().unwrap_or(""),
            &dataset.fixture_mappings,
            *critic_score,
        )),
        http => http.http_provider().expect("http spec"),
    }
}

struct Persist<'a> {
    dir: &'a Path,
    loop_config: &'a LoopConfig,
    record: Option<&'a Path>,
}

impl Persist<'_> {
    fn artifacts(&self, out: &RunOutput, transcript: &Transcript) -> Result<(), RunError> {
        let c = self.loop_config;
        let goal_file = GoalModelFile {
            schema_version: SCHEMA_VERSION,
            project_id: out.goal_model.project_id.clone(),
            actors: out.goal_model.actors.clone(),
            high_level: out.goal_model.high_level.clone(),
            low_level: out.goal_model.low_level.clone(),
            provenance: Provenance {
                strategy: c.strategy,
                critic_enabled: c.critic_enabled,
                keep: c.keep,
                quality_threshold: c.quality_threshold,
                max_iterations: c.max_iterations,
                description_preprocessed: out.preprocessed,
                stages: out
                    .stage_results
                    .iter()
                    .map(|r| StageProvenance {
                        stage: r.stage,
                        iterations_used: r.iterations_used,
                        final_score: r.final_score,
                        converged: r.converged,
                        completed_at: r.completed_at,
                    })
                    .collect(),
            },
        };
        write_json(&self.dir.join(GOAL_MODEL_FILE), &goal_file)?;
        write_json(
            &self.dir.join(API_MAPPINGS_FILE),
            &ApiMappingsFile {
                schema_version: SCHEMA_VERSION,
                project_id: out.goal_model.project_id.clone(),
                mappings: out.api_mappings.clone(),
            },
        )?;
        write_json(
            &self.dir.join(STAGE_RESULTS_FILE),
            &StageResultsFile {
                schema_version: SCHEMA_VERSION,
                description: out.description.clone(),
                results: out.stage_results.clone(),
            },
        )?;
        let path = self.dir.join(TRANSCRIPT_FILE);
        transcript.write(&path).map_err(|e| RunError::Io {
            context: format!("writing {}", path.display()),
            source: io::Error::other(e.to_string()),
        })?;
        if let Some(copy) = self.record {
            transcript.write(copy).map_err(|e| RunError::Io {
                context: format!("writing {}", copy.display()),
                source: io::Error::other(e.to_string()),
            })?;
        }
        Ok(())
    }
}

/// Runs the pipeline for one dataset and writes the run directory.
pub fn execute_run(req: RunRequest<'_>) -> Result<RunOutcome, RunError> {
    req.loop_config.validate().map_err(|e| RunError::Config(e.to_string()))?;
    let prompts: PromptBuilder = req.config.prompt_builder().map_err(|e| RunError::Config(e.to_string()))?;
    let (run_id, dir) = allocate_run_dir(req.out_root, &run_prefix(&req.dataset.id, &req.loop_config))?;

    let gateway = match req.replay {
        Some(recorded) => Gateway::replay(&run_id, recorded),
        None => Gateway::new(
            &run_id,
            provider_for(&req.config.generator, req.dataset),
            Some(provider_for(&req.config.critic, req.dataset)),
        ),
    };
    let started_at = req
        .replay
        .and_then(|t| t.entries.first().map(|e| e.timestamp))
        .unwrap_or_else(Utc::now);
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        run_id: run_id.clone(),
        dataset_id: req.dataset.id.clone(),
        strategy: req.loop_config.strategy,
        critic_enabled: req.loop_config.critic_enabled,
        started_at,
        finished_at: None,
        status: RunStatus::Running,
        replayed_from: req.replay.map(|t| t.run_id.clone()),
        artifacts: ArtifactPaths::default(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    let persist = Persist {
        dir: &dir,
        loop_config: &req.loop_config,
        record: req.record,
    };
    let pipeline = Pipeline::new(&gateway, &prompts, req.loop_config.clone()).map_err(|e| RunError::Config(e.to_string()))?;
    let mut persist_error = None;
    let result = pipeline.run_pipeline(&req.dataset.project(), req.dataset.endpoints.as_deref(), |phase, out| {
        log::info!("{run_id}: {phase} phase complete");
        if let Err(e) = persist.artifacts(out, &gateway.transcript()) {
            persist_error.get_or_insert(e);
        }
    });
    if let Some(e) = persist_error {
        return Err(e);
    }
    let finished_at = match req.replay {
        Some(_) => gateway.last_timestamp(),
        None => Some(Utc::now()),
    };
    manifest.finished_at = finished_at;
    match result {
        Ok(output) => {
            persist.artifacts(&output, &gateway.transcript())?;
            manifest.status = RunStatus::Completed;
            write_json(&dir.join(MANIFEST_FILE), &manifest)?;
            Ok(RunOutcome {
                manifest,
                run_dir: dir,
                output,
            })
        }
        Err(failure) => {
            persist.artifacts(&failure.partial, &gateway.transcript())?;
            manifest.status = RunStatus::Failed {
                phase: failure.error.phase(),
                message: failure.error.to_string(),
            };
            write_json(&dir.join(MANIFEST_FILE), &manifest)?;
            Err(RunError::Stage {
                manifest: Box::new(manifest),
                message: failure.error.to_string(),
            })
        }
    }
}

/// A completed run directory, loaded for evaluation.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub goal_model: GoalModelFile,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, RunError> {
    let manifest = RunManifest::load(dir)?;
    let goal_model: GoalModelFile = read_json(&dir.join(&manifest.artifacts.goal_model))?;
    for v in [manifest.schema_version, goal_model.schema_version] {
        if v > SCHEMA_VERSION {
            return Err(RunError::Config(format!("{} has unsupported schema_version {v}", dir.display())));
        }
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        goal_model,
    })
}

/// Scores a loaded run against its ground truth, one cell per task.
pub fn evaluate_loaded(
    run: &LoadedRun,
    truth: &GroundTruthDataset,
    evaluator: &Evaluator<'_>,
) -> Result<Vec<EvalCell>, EvalError> {
    Ok(evaluator
        .evaluate_run(&run.goal_model.goal_model(), truth)?
        .into_iter()
        .map(|evaluation| EvalCell {
            dataset_id: run.manifest.dataset_id.clone(),
            strategy: run.manifest.strategy,
            critic_enabled: run.manifest.critic_enabled,
            evaluation,
        })
        .collect())
}
