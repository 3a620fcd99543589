//! Prompt construction: stage templates, shot-example injection and
//! critique feedback.
//!
//! Templates are plain text files with a `[system]` and a `[user]` section.
//! Placeholders use `{name}`; `{{` and `}}` produce literal braces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Critique;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing placeholder {0:?}")]
    MissingPlaceholder(String),
    #[error("template syntax error: {0}")]
    TemplateSyntax(String),
    #[error("example store incomplete: {0}")]
    StoreIncomplete(String),
    #[error("invalid example store: {0}")]
    InvalidStore(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// The three stages that run through the generator-critic loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Actors,
    HighLevel,
    LowLevel,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Actors, Stage::HighLevel, Stage::LowLevel];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Actors => "actors",
            Stage::HighLevel => "high_level",
            Stage::LowLevel => "low_level",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Stage::Actors => "Actors",
            Stage::HighLevel => "High-Level Goals",
            Stage::LowLevel => "Low-Level Goals",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every generator-side prompt the pipeline can send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTask {
    Preprocess,
    Actors,
    HighLevel,
    LowLevel,
    ApiMapping,
}

impl PromptTask {
    fn file_stem(self) -> &'static str {
        match self {
            PromptTask::Preprocess => "preprocess",
            PromptTask::Actors => "actors",
            PromptTask::HighLevel => "high_level",
            PromptTask::LowLevel => "low_level",
            PromptTask::ApiMapping => "api_mapping",
        }
    }

    fn shot_task(self) -> Option<ShotTask> {
        match self {
            PromptTask::Actors => Some(ShotTask::Actors),
            PromptTask::HighLevel => Some(ShotTask::HighLevel),
            PromptTask::LowLevel => Some(ShotTask::LowLevel),
            PromptTask::Preprocess | PromptTask::ApiMapping => None,
        }
    }
}

impl From<Stage> for PromptTask {
    fn from(stage: Stage) -> Self {
        match stage {
            Stage::Actors => PromptTask::Actors,
            Stage::HighLevel => PromptTask::HighLevel,
            Stage::LowLevel => PromptTask::LowLevel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotStrategy {
    ZeroShot,
    OneShot,
    FewShot,
}

impl ShotStrategy {
    pub const ALL: [ShotStrategy; 3] = [
        ShotStrategy::ZeroShot,
        ShotStrategy::OneShot,
        ShotStrategy::FewShot,
    ];

    pub fn example_count(self) -> usize {
        match self {
            ShotStrategy::ZeroShot => 0,
            ShotStrategy::OneShot => 1,
            ShotStrategy::FewShot => 3,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ShotStrategy::ZeroShot => "ZS",
            ShotStrategy::OneShot => "OS",
            ShotStrategy::FewShot => "FS",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShotStrategy::ZeroShot => "zero-shot",
            ShotStrategy::OneShot => "one-shot",
            ShotStrategy::FewShot => "few-shot",
        }
    }
}

impl fmt::Display for ShotStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShotStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero-shot" | "zs" | "zero" => Ok(ShotStrategy::ZeroShot),
            "one-shot" | "os" | "one" => Ok(ShotStrategy::OneShot),
            "few-shot" | "fs" | "few" => Ok(ShotStrategy::FewShot),
            other => Err(format!("unknown shot strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotTask {
    Actors,
    HighLevel,
    LowLevel,
    Critique,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotExample {
    pub task: ShotTask,
    /// Stage being critiqued; only set on critique examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub source_name: String,
    pub input_payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_and_comment: Option<Critique>,
}

impl ShotExample {
    /// Text used when comparing an example against a project description.
    pub fn similarity_text(&self) -> String {
        match (&self.expected_output, &self.score_and_comment) {
            (Some(out), _) => format!("{}\n{}", self.input_payload, out),
            (None, Some(c)) => format!("{}\n{}", self.input_payload, c.comment),
            (None, None) => self.input_payload.clone(),
        }
    }
}

/// Curated shot examples in configuration order.
#[derive(Debug, Clone, Default)]
pub struct ExampleStore {
    examples: Vec<ShotExample>,
}

const BUNDLED_EXAMPLES: &str = include_str!("../data/shot_examples.json");

impl ExampleStore {
    pub fn new(examples: Vec<ShotExample>) -> Result<Self, PromptError> {
        for (i, ex) in examples.iter().enumerate() {
            let ok = match ex.task {
                ShotTask::Critique => ex.score_and_comment.is_some() && ex.stage.is_some(),
                _ => ex.score_and_comment.is_none() && ex.expected_output.is_some(),
            };
            if !ok {
                return Err(PromptError::InvalidStore(format!(
                    "example {i} ({:?} from {}) has the wrong fields for its task",
                    ex.task, ex.source_name
                )));
            }
            if let Some(c) = &ex.score_and_comment {
                if Critique::new(c.score, "").is_none() {
                    return Err(PromptError::InvalidStore(format!(
                        "example {i} has score {} outside [0, 10]",
                        c.score
                    )));
                }
            }
        }
        Ok(Self { examples })
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let examples: Vec<ShotExample> =
            serde_json::from_str(text).map_err(|e| PromptError::InvalidStore(e.to_string()))?;
        Self::new(examples)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_EXAMPLES).expect("bundled example store is valid")
    }

    pub fn examples(&self) -> &[ShotExample] {
        &self.examples
    }

    /// Generator-side examples for `task` under `strategy`.
    pub fn select(
        &self,
        task: ShotTask,
        strategy: ShotStrategy,
    ) -> Result<Vec<&ShotExample>, PromptError> {
        let want = strategy.example_count();
        let found: Vec<_> = self.examples.iter().filter(|e| e.task == task).collect();
        take_exact(found, want, || format!("{task:?} under {strategy}"))
    }

    /// The three critique examples for `stage`; the critic is always few-shot.
    pub fn select_critique(&self, stage: Stage) -> Result<Vec<&ShotExample>, PromptError> {
        let found: Vec<_> = self
            .examples
            .iter()
            .filter(|e| e.task == ShotTask::Critique && e.stage == Some(stage))
            .collect();
        take_exact(found, ShotStrategy::FewShot.example_count(), || {
            format!("critique of {stage}")
        })
    }
}

fn take_exact(
    mut found: Vec<&ShotExample>,
    want: usize,
    what: impl FnOnce() -> String,
) -> Result<Vec<&ShotExample>, PromptError> {
    if found.len() < want {
        return Err(PromptError::StoreIncomplete(format!(
            "{} needs {want} examples, {} available",
            what(),
            found.len()
        )));
    }
    found.truncate(want);
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let sys = text
            .find("[system]")
            .ok_or_else(|| PromptError::TemplateSyntax("missing [system] section".into()))?;
        let usr = text
            .find("[user]")
            .ok_or_else(|| PromptError::TemplateSyntax("missing [user] section".into()))?;
        if usr < sys {
            return Err(PromptError::TemplateSyntax(
                "[system] must precede [user]".into(),
            ));
        }
        Ok(Self {
            system: text[sys + "[system]".len()..usr].trim().to_string(),
            user: text[usr + "[user]".len()..].trim().to_string(),
        })
    }
}

/// Values substituted into `{name}` placeholders.
pub type PromptContext = BTreeMap<String, String>;

/// Renders `{name}` placeholders from `ctx`.
pub fn render(template: &str, ctx: &PromptContext) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) if ch.is_alphanumeric() || ch == '_' => name.push(ch),
                        Some(ch) => {
                            return Err(PromptError::TemplateSyntax(format!(
                                "unexpected {ch:?} in placeholder {{{name}"
                            )))
                        }
                        None => {
                            return Err(PromptError::TemplateSyntax(format!(
                                "unterminated placeholder {{{name}"
                            )))
                        }
                    }
                }
                let value = ctx
                    .get(&name)
                    .ok_or_else(|| PromptError::MissingPlaceholder(name.clone()))?;
                out.push_str(value);
            }
            '}' => {
                return Err(PromptError::TemplateSyntax(
                    "unmatched '}' (use '}}' for a literal brace)".into(),
                ))
            }
            c => out.push(c),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    generator: BTreeMap<&'static str, Template>,
    critic: BTreeMap<Stage, Template>,
}

macro_rules! bundled_template {
    ($name:literal) => {
        (
            $name,
            include_str!(concat!("../data/templates/", $name, ".txt")),
        )
    };
}

const BUNDLED_TEMPLATES: [(&str, &str); 8] = [
    bundled_template!("preprocess"),
    bundled_template!("actors"),
    bundled_template!("high_level"),
    bundled_template!("low_level"),
    bundled_template!("api_mapping"),
    bundled_template!("critique_actors"),
    bundled_template!("critique_high_level"),
    bundled_template!("critique_low_level"),
];

impl TemplateSet {
    fn from_sources<F>(mut source: F) -> Result<Self, PromptError>
    where
        F: FnMut(&'static str) -> Result<String, PromptError>,
    {
        let mut generator = BTreeMap::new();
        for task in [
            PromptTask::Preprocess,
            PromptTask::Actors,
            PromptTask::HighLevel,
            PromptTask::LowLevel,
            PromptTask::ApiMapping,
        ] {
            let stem = task.file_stem();
            generator.insert(stem, Template::parse(&source(stem)?)?);
        }
        let mut critic = BTreeMap::new();
        for (stage, stem) in [
            (Stage::Actors, "critique_actors"),
            (Stage::HighLevel, "critique_high_level"),
            (Stage::LowLevel, "critique_low_level"),
        ] {
            critic.insert(stage, Template::parse(&source(stem)?)?);
        }
        Ok(Self { generator, critic })
    }

    pub fn bundled() -> Self {
        Self::from_sources(|stem| {
            Ok(BUNDLED_TEMPLATES
                .iter()
                .find(|(n, _)| *n == stem)
                .map(|(_, t)| t.to_string())
                .expect("all bundled templates present"))
        })
        .expect("bundled templates parse")
    }

    /// Loads `<stem>.txt` files from `dir`, falling back to the bundled copy
    /// for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::from_sources(|stem| {
            let path = dir.join(format!("{stem}.txt"));
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
            } else {
                Ok(BUNDLED_TEMPLATES
                    .iter()
                    .find(|(n, _)| *n == stem)
                    .map(|(_, t)| t.to_string())
                    .expect("all bundled templates present"))
            }
        })
    }

    pub fn generator(&self, task: PromptTask) -> &Template {
        &self.generator[task.file_stem()]
    }

    pub fn critic(&self, stage: Stage) -> &Template {
        &self.critic[&stage]
    }
}

/// A rendered prompt ready to become a chat request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPayload {
    pub system_text: String,
    pub user_text: String,
    pub embedded_examples: usize,
    pub includes_prior_critique: bool,
}

/// Delimiter for the critique section appended to a retried generator prompt.
pub const FEEDBACK_HEADER: &str = "### Previous attempt feedback";

/// Formats a critic score the way the exemplars do (`3/10`, `8.5/10`).
pub fn format_score(score: f64) -> String {
    if score.fract() == 0.0 {
        format!("{score:.0}/10")
    } else {
        format!("{score}/10")
    }
}

fn examples_block(intro: &str, examples: &[&ShotExample]) -> String {
    let mut out = String::from(intro);
    for (i, ex) in examples.iter().enumerate() {
        out.push_str(&format!("\n\nExample {}:\n{}\n", i + 1, ex.input_payload));
        if let Some(output) = &ex.expected_output {
            out.push_str(&format!("***Output:*** {output}"));
        }
        if let Some(c) = &ex.score_and_comment {
            out.push_str(&format!(
                "***Score:*** {}\n***Comment:*** {}",
                format_score(c.score),
                c.comment
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: TemplateSet,
    store: ExampleStore,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(TemplateSet::bundled(), ExampleStore::bundled())
    }
}

impl PromptBuilder {
    pub fn new(templates: TemplateSet, store: ExampleStore) -> Self {
        Self { templates, store }
    }

    pub fn store(&self) -> &ExampleStore {
        &self.store
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn select_shot_examples(
        &self,
        task: ShotTask,
        strategy: ShotStrategy,
    ) -> Result<Vec<&ShotExample>, PromptError> {
        self.store.select(task, strategy)
    }

    /// Generator prompt. Tasks without curated examples (README
    /// preprocessing, API mapping) never embed any.
    pub fn build_prompt(
        &self,
        task: PromptTask,
        strategy: ShotStrategy,
        ctx: &PromptContext,
        prior_critique: Option<&Critique>,
    ) -> Result<PromptPayload, PromptError> {
        let template = self.templates.generator(task);
        let system_text = render(&template.system, ctx)?;
        let body = render(&template.user, ctx)?;
        let examples = match task.shot_task() {
            Some(shot) => self.store.select(shot, strategy)?,
            None => Vec::new(),
        };
        let mut user_text = String::new();
        if !examples.is_empty() {
            user_text.push_str(&examples_block(
                "Here are some examples of the expected output.",
                &examples,
            ));
            user_text.push_str("\n\n");
        }
        user_text.push_str(&body);
        if let Some(c) = prior_critique {
            user_text.push_str(&format!(
                "\n\n{FEEDBACK_HEADER}\nScore: {}\nComment: {}\nAddress this feedback in your new answer.",
                format_score(c.score),
                c.comment
            ));
        }
        Ok(PromptPayload {
            system_text,
            user_text,
            embedded_examples: examples.len(),
            includes_prior_critique: prior_critique.is_some(),
        })
    }

    /// Critic prompt for `candidate`, the generator's JSON output for `stage`.
    pub fn build_critic_prompt(
        &self,
        stage: Stage,
        ctx: &PromptContext,
        candidate: &str,
    ) -> Result<PromptPayload, PromptError> {
        if is_empty_candidate(candidate) {
            return Err(PromptError::MissingPlaceholder("candidate".into()));
        }
        let mut ctx = ctx.clone();
        ctx.insert("candidate".into(), candidate.to_string());
        let template = self.templates.critic(stage);
        let system_text = render(&template.system, &ctx)?;
        let body = render(&template.user, &ctx)?;
        let examples = self.store.select_critique(stage)?;
        let user_text = format!(
            "{}\n\n{}",
            examples_block("Here are some examples of critiques.", &examples),
            body
        );
        Ok(PromptPayload {
            system_text,
            user_text,
            embedded_examples: examples.len(),
            includes_prior_critique: false,
        })
    }
}

fn is_empty_candidate(candidate: &str) -> bool {
    let trimmed = candidate.trim();
    if trimmed.is_empty() {
        return true;
    }
    matches!(
        serde_json::from_str::<serde_json::Value>(trimmed),
        Ok(serde_json::Value::Array(ref a)) if a.is_empty()
    )
}
