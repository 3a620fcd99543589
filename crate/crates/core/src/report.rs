//! Plain-text reports: result tables, shot-example similarity and ablation
//! comparisons. Numbers are rounded to two decimals (four for shot
//! similarity); the best value in a row is marked with `*`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evaluation::{cosine, EmbeddingVector, Embedder, EvalCell, EvalError, EvalReport, TaskMetrics};
use crate::model::SCHEMA_VERSION;
use crate::prompting::{ExampleStore, PromptError, ShotStrategy, ShotTask, Stage};

/// Metrics for every (task, strategy) cell under one heading.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsGrid {
    pub title: String,
    pub values: BTreeMap<(Stage, ShotStrategy), TaskMetrics>,
}

fn critic_label(enabled: bool) -> &'static str {
    if enabled {
        "critic on"
    } else {
        "critic off"
    }
}

/// One grid per (dataset, critic setting).
pub fn dataset_grids(report: &EvalReport) -> Vec<ResultsGrid> {
    let mut grids: BTreeMap<(String, bool), ResultsGrid> = BTreeMap::new();
    for cell in &report.cells {
        grids
            .entry((cell.dataset_id.clone(), !cell.critic_enabled))
            .or_insert_with(|| ResultsGrid {
                title: format!("{} ({})", cell.dataset_id, critic_label(cell.critic_enabled)),
                values: BTreeMap::new(),
            })
            .values
            .insert((cell.evaluation.task, cell.strategy), cell.evaluation.metrics);
    }
    grids.into_values().collect()
}

/// Macro average over datasets: P, R and F1 are each the arithmetic mean of
/// the per-dataset values. One grid per critic setting.
pub fn average_grids(cells: &[EvalCell]) -> Vec<ResultsGrid> {
    type Sum<'a> = (TaskMetrics, usize, BTreeSet<&'a str>);
    let mut sums: BTreeMap<(bool, Stage, ShotStrategy), Sum> = BTreeMap::new();
    for cell in cells {
        let entry = sums
            .entry((!cell.critic_enabled, cell.evaluation.task, cell.strategy))
            .or_insert((TaskMetrics::ZERO, 0, BTreeSet::new()));
        let m = cell.evaluation.metrics;
        entry.0.precision += m.precision;
        entry.0.recall += m.recall;
        entry.0.f1 += m.f1;
        entry.1 += 1;
        entry.2.insert(&cell.dataset_id);
    }
    let mut grids: BTreeMap<bool, ResultsGrid> = BTreeMap::new();
    for ((critic_off, task, strategy), (sum, n, datasets)) in sums {
        let n = n as f64;
        let grid = grids.entry(critic_off).or_insert_with(|| ResultsGrid {
            title: String::new(),
            values: BTreeMap::new(),
        });
        let plural = if datasets.len() == 1 { "" } else { "s" };
        grid.title = format!("average over {} dataset{plural} ({})", datasets.len(), critic_label(!critic_off));
        grid.values.insert(
            (task, strategy),
            TaskMetrics {
                precision: sum.precision / n,
                recall: sum.recall / n,
                f1: sum.f1 / n,
            },
        );
    }
    grids.into_values().collect()
}

const METRIC_WIDTH: usize = 8;
const CELL_WIDTH: usize = 5;

fn centred(text: &str, width: usize) -> String {
    let pad = width.saturating_sub(text.chars().count());
    format!("{}{text}{}", " ".repeat(pad / 2), " ".repeat(pad - pad / 2))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Renders a grid as Prec./Recall/F1 rows under ZS/OS/FS columns per task.
/// Missing cells print as `-`.
pub fn render_grid(grid: &ResultsGrid) -> String {
    let block = ShotStrategy::ALL.len() * (CELL_WIDTH + 1) + 1;
    let mut out = String::new();
    writeln!(out, "{}", grid.title).unwrap();
    let mut head = format!("{:<METRIC_WIDTH$}", "");
    let mut sub = format!("{:<METRIC_WIDTH$}", "Metric");
    for task in Stage::ALL {
        write!(head, "|{}", centred(task.title(), block)).unwrap();
        sub.push('|');
        for s in ShotStrategy::ALL {
            write!(sub, " {:<CELL_WIDTH$}", s.short()).unwrap();
        }
        sub.push(' ');
    }
    writeln!(out, "{}", head.trim_end()).unwrap();
    writeln!(out, "{}", sub.trim_end()).unwrap();
    let mut rule = "-".repeat(METRIC_WIDTH);
    for _ in Stage::ALL {
        write!(rule, "+{}", "-".repeat(block)).unwrap();
    }
    writeln!(out, "{rule}").unwrap();

    type Row = (&'static str, fn(&TaskMetrics) -> f64);
    let metrics: [Row; 3] = [
        ("Prec.", |m| m.precision),
        ("Recall", |m| m.recall),
        ("F1", |m| m.f1),
    ];
    for (label, get) in metrics {
        let mut line = format!("{label:<METRIC_WIDTH$}");
        for task in Stage::ALL {
            let row: Vec<Option<f64>> = ShotStrategy::ALL
                .iter()
                .map(|s| grid.values.get(&(task, *s)).map(|m| round2(get(m))))
                .collect();
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            let best = (present.len() > 1).then(|| present.iter().copied().fold(f64::MIN, f64::max));
            line.push('|');
            for v in row {
                let text = match v {
                    Some(v) if Some(v) == best => format!("{v:.2}*"),
                    Some(v) => format!("{v:.2}"),
                    None => "-".to_string(),
                };
                write!(line, " {text:<CELL_WIDTH$}").unwrap();
            }
            line.push(' ');
        }
        writeln!(out, "{}", line.trim_end()).unwrap();
    }
    out
}

pub fn render_grids(grids: &[ResultsGrid]) -> String {
    grids.iter().map(render_grid).collect::<Vec<_>>().join("\n")
}

/// Mean cosine between each dataset description and a task's examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSimilarityRow {
    pub dataset_id: String,
    pub actors: f64,
    pub high_level: f64,
    pub low_level: f64,
}

impl ShotSimilarityRow {
    fn values(&self) -> [f64; 3] {
        [self.actors, self.high_level, self.low_level]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSimilaritySection {
    pub rows: Vec<ShotSimilarityRow>,
    /// Mean of the rows, per task.
    pub average: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSimilarityReport {
    pub schema_version: u32,
    pub generator: ShotSimilaritySection,
    pub critic: ShotSimilaritySection,
}

impl ShotSimilarityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn one(backend: &dyn Embedder, text: &str) -> Result<EmbeddingVector, EvalError> {
    backend
        .embed(&[text.to_string()])?
        .pop()
        .ok_or_else(|| EvalError::BackendUnreachable("no embedding returned".into()))
}

fn mean_cosine(anchor: &EmbeddingVector, others: &[EmbeddingVector]) -> Result<f64, EvalError> {
    if others.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for o in others {
        total += cosine(anchor, o).ok_or_else(|| EvalError::ZeroVector("shot example".into()))?;
    }
    Ok(total / others.len() as f64)
}

/// `examples[i]` holds the example texts for `Stage::ALL[i]`.
pub fn similarity_section(
    datasets: &[(String, String)],
    examples: &[Vec<String>; 3],
    backend: &dyn Embedder,
) -> Result<ShotSimilaritySection, EvalError> {
    let embedded: Vec<Vec<EmbeddingVector>> =
        examples.iter().map(|texts| backend.embed(texts)).collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(datasets.len());
    for (id, description) in datasets {
        let anchor = one(backend, description)?;
        rows.push(ShotSimilarityRow {
            dataset_id: id.clone(),
            actors: mean_cosine(&anchor, &embedded[0])?,
            high_level: mean_cosine(&anchor, &embedded[1])?,
            low_level: mean_cosine(&anchor, &embedded[2])?,
        });
    }
    let mut average = [0.0; 3];
    if !rows.is_empty() {
        for row in &rows {
            for (a, v) in average.iter_mut().zip(row.values()) {
                *a += v;
            }
        }
        average.iter_mut().for_each(|a| *a /= rows.len() as f64);
    }
    Ok(ShotSimilaritySection { rows, average })
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cell mismatch: {0}")]
    CellMismatch(String),
}

/// Compares each description (raw text, no stemming) with the generator's
/// few-shot examples and with the critic's examples, stage by stage.
pub fn shot_similarity(
    datasets: &[(String, String)],
    store: &ExampleStore,
    backend: &dyn Embedder,
) -> Result<ShotSimilarityReport, ReportError> {
    let texts = |examples: Vec<&crate::prompting::ShotExample>| -> Vec<String> {
        examples.iter().map(|e| e.similarity_text()).collect()
    };
    let task = |stage: Stage| match stage {
        Stage::Actors => ShotTask::Actors,
        Stage::HighLevel => ShotTask::HighLevel,
        Stage::LowLevel => ShotTask::LowLevel,
    };
    let mut generator: [Vec<String>; 3] = Default::default();
    let mut critic: [Vec<String>; 3] = Default::default();
    for (i, stage) in Stage::ALL.into_iter().enumerate() {
        generator[i] = texts(store.select(task(stage), ShotStrategy::FewShot)?);
        critic[i] = texts(store.select_critique(stage)?);
    }
    Ok(ShotSimilarityReport {
        schema_version: SCHEMA_VERSION,
        generator: similarity_section(datasets, &generator, backend)?,
        critic: similarity_section(datasets, &critic, backend)?,
    })
}

fn render_section(out: &mut String, title: &str, section: &ShotSimilaritySection) {
    let width = section
        .rows
        .iter()
        .map(|r| r.dataset_id.len())
        .chain(["Average per Task".len()])
        .max()
        .unwrap_or(0);
    writeln!(out, "{title}").unwrap();
    let mut head = format!("{:<width$}", "Dataset");
    for stage in Stage::ALL {
        write!(head, "  {:>16}", stage.title()).unwrap();
    }
    writeln!(out, "{head}").unwrap();
    writeln!(out, "{}", "-".repeat(head.len())).unwrap();
    let line = |name: &str, values: [f64; 3]| {
        let mut l = format!("{name:<width$}");
        for v in values {
            write!(l, "  {v:>16.4}").unwrap();
        }
        l
    };
    for row in &section.rows {
        writeln!(out, "{}", line(&row.dataset_id, row.values())).unwrap();
    }
    writeln!(out, "{}", line("Average per Task", section.average)).unwrap();
}

pub fn render_shot_similarity(report: &ShotSimilarityReport) -> String {
    let mut out = String::new();
    render_section(&mut out, "Generator shot examples", &report.generator);
    out.push('\n');
    render_section(&mut out, "Critic shot examples", &report.critic);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset_id: String,
    pub task: Stage,
    pub strategy: ShotStrategy,
    pub with_critic: TaskMetrics,
    pub without_critic: TaskMetrics,
}

type CellKey = (String, Stage, ShotStrategy);

fn cell_name((dataset, task, strategy): &CellKey) -> String {
    format!("{dataset}/{task}/{}", strategy.short())
}

/// Pairs the cells of a critic-on report with those of a critic-off report.
/// Both must cover exactly the same (dataset, task, strategy) cells.
pub fn compare_reports(with_critic: &EvalReport, without_critic: &EvalReport) -> Result<Vec<AblationRow>, ReportError> {
    let index = |r: &EvalReport| -> Result<BTreeMap<CellKey, TaskMetrics>, ReportError> {
        let mut map = BTreeMap::new();
        for c in &r.cells {
            if map.insert(c.key(), c.evaluation.metrics).is_some() {
                return Err(ReportError::CellMismatch(format!(
                    "{} appears more than once",
                    cell_name(&c.key())
                )));
            }
        }
        Ok(map)
    };
    let a = index(with_critic)?;
    let b = index(without_critic)?;
    let missing = |from: &BTreeMap<CellKey, TaskMetrics>, other: &BTreeMap<CellKey, TaskMetrics>| {
        other.keys().filter(|k| !from.contains_key(*k)).map(cell_name).collect::<Vec<_>>()
    };
    let (missing_b, missing_a) = (missing(&b, &a), missing(&a, &b));
    if !missing_a.is_empty() || !missing_b.is_empty() {
        let mut parts = Vec::new();
        if !missing_b.is_empty() {
            parts.push(format!("absent from the critic-off report: {}", missing_b.join(", ")));
        }
        if !missing_a.is_empty() {
            parts.push(format!("absent from the critic-on report: {}", missing_a.join(", ")));
        }
        return Err(ReportError::CellMismatch(parts.join("; ")));
    }
    Ok(a.into_iter()
        .map(|(key, with)| {
            let without = b[&key];
            AblationRow {
                dataset_id: key.0,
                task: key.1,
                strategy: key.2,
                with_critic: with,
                without_critic: without,
            }
        })
        .collect())
}

/// Signed two-decimal delta; a delta that rounds to zero prints `0.00`.
pub fn format_delta(delta: f64) -> String {
    let r = round2(delta);
    if r == 0.0 {
        "0.00".to_string()
    } else {
        format!("{r:+.2}")
    }
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.dataset_id.len()).chain(["Dataset".len()]).max().unwrap_or(7);
    let mut out = String::new();
    let mut head = format!("{:<width$}  {:<16}  {:<4}", "Dataset", "Task", "Shot");
    for m in ["Prec.", "Recall", "F1"] {
        write!(head, " | {:>5} {:>5} {:>5}", format!("{m}"), "off", "delta").unwrap();
    }
    writeln!(out, "{head}").unwrap();
    writeln!(out, "{}", "-".repeat(head.len())).unwrap();
    for r in rows {
        let mut line = format!("{:<width$}  {:<16}  {:<4}", r.dataset_id, r.task.title(), r.strategy.short());
        let pairs = [
            (r.with_critic.precision, r.without_critic.precision),
            (r.with_critic.recall, r.without_critic.recall),
            (r.with_critic.f1, r.without_critic.f1),
        ];
        for (on, off) in pairs {
            write!(line, " | {on:>5.2} {off:>5.2} {:>5}", format_delta(on - off)).unwrap();
        }
        writeln!(out, "{line}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{HashingEmbedder, MatchingResult, MetricConvention, TaskEvaluation};

    pub(crate) fn cell(dataset: &str, task: Stage, strategy: ShotStrategy, critic: bool, p: f64, r: f64) -> EvalCell {
        EvalCell {
            dataset_id: dataset.into(),
            strategy,
            critic_enabled: critic,
            evaluation: TaskEvaluation {
                task,
                metrics: TaskMetrics::from_precision_recall(p, r),
                generated: vec![],
                reference: vec![],
                matching: MatchingResult {
                    arcs: vec![],
                    unmatched_generated: vec![],
                    unmatched_reference: vec![],
                },
                warnings: vec![],
            },
        }
    }

    #[test]
    fn best_value_marked_and_missing_dashed() {
        let report = EvalReport::new(
            MetricConvention::ReferencePrecision,
            vec![
                cell("d", Stage::Actors, ShotStrategy::ZeroShot, true, 0.5, 0.5),
                cell("d", Stage::Actors, ShotStrategy::FewShot, true, 0.75, 0.25),
            ],
        )
        .unwrap();
        let text = render_grids(&dataset_grids(&report));
        let prec = text.lines().find(|l| l.starts_with("Prec.")).unwrap();
        assert!(prec.contains("0.50  -     0.75*"), "{prec}");
        let recall = text.lines().find(|l| l.starts_with("Recall")).unwrap();
        assert!(recall.contains("0.50* -     0.25"), "{recall}");
    }

    #[test]
    fn duplicate_cells_rejected() {
        let c = cell("d", Stage::Actors, ShotStrategy::ZeroShot, true, 0.5, 0.5);
        assert!(EvalReport::new(MetricConvention::ReferencePrecision, vec![c.clone(), c]).is_err());
    }

    #[test]
    fn average_is_macro() {
        let cells = vec![
            cell("a", Stage::Actors, ShotStrategy::ZeroShot, true, 1.0, 0.5),
            cell("b", Stage::Actors, ShotStrategy::ZeroShot, true, 0.5, 0.5),
        ];
        let g = average_grids(&cells);
        assert_eq!(g.len(), 1);
        let m = g[0].values[&(Stage::Actors, ShotStrategy::ZeroShot)];
        assert!((m.precision - 0.75).abs() < 1e-12);
        // Mean of the two F1s, not F1 of the means.
        let f1a = 2.0 * 0.5 / 1.5;
        assert!((m.f1 - (f1a + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_text_has_similarity_one() {
        let e = HashingEmbedder::default();
        let text = "A platform that tracks open source activity.".to_string();
        let section = similarity_section(
            &[("d".into(), text.clone())],
            &[vec![text.clone()], vec![text.clone()], vec![text]],
            &e,
        )
        .unwrap();
        for v in section.average {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bundled_store_similarity_has_average_row() {
        let e = HashingEmbedder::default();
        let report = shot_similarity(
            &[("a".into(), "hospital beds".into()), ("b".into(), "city tickets".into())],
            &ExampleStore::bundled(),
            &e,
        )
        .unwrap();
        let text = render_shot_similarity(&report);
        assert_eq!(text.matches("Average per Task").count(), 2);
        let avg = report.generator.average[0];
        assert!((avg - (report.generator.rows[0].actors + report.generator.rows[1].actors) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ablation_deltas() {
        let on = EvalReport::new(
            MetricConvention::ReferencePrecision,
            vec![cell("d", Stage::HighLevel, ShotStrategy::ZeroShot, true, 0.62, 0.62)],
        )
        .unwrap();
        let off = EvalReport::new(
            MetricConvention::ReferencePrecision,
            vec![cell("d", Stage::HighLevel, ShotStrategy::ZeroShot, false, 0.60, 0.60)],
        )
        .unwrap();
        let rows = compare_reports(&on, &off).unwrap();
        let text = render_ablation(&rows);
        assert!(text.contains("+0.02"), "{text}");
        let same = render_ablation(&compare_reports(&on, &on).unwrap());
        assert_eq!(same.matches("0.00").count(), 3, "{same}");
        assert!(!same.contains("+0.00"));
    }

    #[test]
    fn ablation_missing_cell_listed() {
        let on = EvalReport::new(
            MetricConvention::ReferencePrecision,
            vec![
                cell("d", Stage::HighLevel, ShotStrategy::ZeroShot, true, 0.6, 0.6),
                cell("d", Stage::LowLevel, ShotStrategy::FewShot, true, 0.6, 0.6),
            ],
        )
        .unwrap();
        let off = EvalReport::new(
            MetricConvention::ReferencePrecision,
            vec![cell("d", Stage::HighLevel, ShotStrategy::ZeroShot, false, 0.6, 0.6)],
        )
        .unwrap();
        let err = compare_reports(&on, &off).unwrap_err().to_string();
        assert!(err.contains("d/low_level/FS"), "{err}");
    }

    #[test]
    fn delta_format() {
        assert_eq!(format_delta(0.62 - 0.60), "+0.02");
        assert_eq!(format_delta(-0.031), "-0.03");
        assert_eq!(format_delta(0.001), "0.00");
        assert_eq!(format_delta(-0.001), "0.00");
    }
}
