//! Run configuration file.
//!
//! ```json
//! {
//!   "generator": {"kind": "http", "base_url": "https://api.openai.com/v1", "model": "gpt-4o", "api_key_env": "OPENAI_API_KEY"},
//!   "critic": {"kind": "http", "base_url": "http://localhost:8000/v1", "model": "llama-3-70b-instruct"},
//!   "embedder": {"kind": "hashing"},
//!   "strategy": "few-shot",
//!   "quality_threshold": 8.5,
//!   "max_iterations": 3,
//!   "critic_enabled": true,
//!   "keep": "last",
//!   "metric_convention": "reference_precision",
//!   "templates_dir": "templates",
//!   "examples_path": "shot_examples.json",
//!   "datasets_dir": "datasets"
//! }
//! ```
//!
//! Every key is optional. Relative paths resolve against the config file's
//! directory. Without a config the offline fixture providers are used.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{Embedder, HashingEmbedder, HttpEmbedder, MetricConvention, HASHING_DIMENSION};
use crate::gateway::{ChatProvider, OpenAiProvider, ProviderConfig, RetryPolicy};
use crate::orchestrator::LoopConfig;
use crate::prompting::{ExampleStore, PromptBuilder, PromptError, TemplateSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Where chat completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Http(ProviderConfig),
    /// Answers every stage with the dataset's annotations; the critic side
    /// returns `critic_score`. Offline and deterministic.
    Fixture {
        #[serde(default = "default_fixture_score")]
        critic_score: f64,
    },
}

fn default_fixture_score() -> f64 {
    9.0
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Fixture {
            critic_score: default_fixture_score(),
        }
    }
}

impl ProviderSpec {
    /// Builds the HTTP provider, or `None` for a fixture spec.
    pub fn http_provider(&self) -> Option<Arc<dyn ChatProvider>> {
        match self {
            ProviderSpec::Http(c) => Some(Arc::new(OpenAiProvider::new(c, RetryPolicy::default()))),
            ProviderSpec::Fixture { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Http(ProviderConfig),
}

fn default_dimension() -> usize {
    HASHING_DIMENSION
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing {
            dimension: HASHING_DIMENSION,
        }
    }
}

impl EmbedderSpec {
    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderSpec::Hashing { dimension } => Box::new(HashingEmbedder::new(*dimension)),
            EmbedderSpec::Http(c) => Box::new(HttpEmbedder::new(c, RetryPolicy::default())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub generator: ProviderSpec,
    pub critic: ProviderSpec,
    pub embedder: EmbedderSpec,
    #[serde(flatten)]
    pub loop_config: LoopConfig,
    pub metric_convention: MetricConvention,
    pub templates_dir: Option<PathBuf>,
    pub examples_path: Option<PathBuf>,
    pub datasets_dir: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "generator",
    "critic",
    "embedder",
    "quality_threshold",
    "max_iterations",
    "strategy",
    "critic_enabled",
    "keep",
    "temperature",
    "metric_convention",
    "templates_dir",
    "examples_path",
    "datasets_dir",
];

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let object = value
            .as_object()
            .ok_or_else(|| ConfigError::Invalid("config must be a JSON object".into()))?;
        if let Some(unknown) = object.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::Invalid(format!("unknown key {unknown:?}")));
        }
        let mut config: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for path in [&mut config.templates_dir, &mut config.examples_path, &mut config.datasets_dir]
            .into_iter()
            .flatten()
        {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loop_config
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for spec in [&self.generator, &self.critic] {
            match spec {
                ProviderSpec::Fixture { critic_score } if !(0.0..=10.0).contains(critic_score) => {
                    return Err(ConfigError::Invalid(format!("fixture critic_score {critic_score} outside [0, 10]")));
                }
                ProviderSpec::Http(c) if c.base_url.is_empty() || c.model.is_empty() => {
                    return Err(ConfigError::Invalid("http provider needs base_url and model".into()));
                }
                _ => {}
            }
        }
        if let EmbedderSpec::Hashing { dimension: 0 } = self.embedder {
            return Err(ConfigError::Invalid("hashing dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn prompt_builder(&self) -> Result<PromptBuilder, ConfigError> {
        let templates = match &self.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::bundled(),
        };
        let store = match &self.examples_path {
            Some(path) => ExampleStore::load(path)?,
            None => ExampleStore::bundled(),
        };
        Ok(PromptBuilder::new(templates, store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::ShotStrategy;

    #[test]
    fn empty_config_is_offline_default() {
        let c = RunConfig::from_json("{}", Path::new("/tmp")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.generator.http_provider().is_none());
        assert_eq!(c.loop_config.quality_threshold, 8.5);
    }

    #[test]
    fn full_config() {
        let c = RunConfig::from_json(
            r#"{"generator": {"kind": "http", "base_url": "http://x/v1", "model": "m", "api_key_env": "K"},
                "strategy": "one-shot", "critic_enabled": false, "keep": "best",
                "metric_convention": "bertscore", "datasets_dir": "data"}"#,
            Path::new("/etc/gc"),
        )
        .unwrap();
        assert_eq!(c.loop_config.strategy, ShotStrategy::OneShot);
        assert!(!c.loop_config.critic_enabled);
        assert_eq!(c.metric_convention, MetricConvention::Bertscore);
        assert_eq!(c.datasets_dir.as_deref(), Some(Path::new("/etc/gc/data")));
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"temperature": 0.3}"#,
            r#"{"max_iterations": 0}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"generator": {"kind": "http", "base_url": "", "model": "m"}}"#,
            r#"{"critic": {"kind": "fixture", "critic_score": 12}}"#,
        ] {
            assert!(RunConfig::from_json(bad, Path::new(".")).is_err(), "{bad}");
        }
    }
}
