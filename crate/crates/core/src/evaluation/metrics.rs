use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matching::MatchingResult;

/// Which set size divides the matched similarity mass for each metric.
///
/// `ReferencePrecision` divides recall by the number of generated items and precision by
/// the number of reference items; `Bertscore` is the reverse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricConvention {
    #[default]
    ReferencePrecision,
    Bertscore,
}

impl fmt::Display for MetricConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricConvention::ReferencePrecision => "reference_precision",
            MetricConvention::Bertscore => "bertscore",
        })
    }
}

impl FromStr for MetricConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference_precision" => Ok(Self::ReferencePrecision),
            "bertscore" => Ok(Self::Bertscore),
            other => Err(format!("unknown metric convention {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TaskMetrics {
    pub const ZERO: TaskMetrics = TaskMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Soft precision/recall over the matched arcs. Empty sides yield zeros.
pub fn compute_metrics(
    matching: &MatchingResult,
    generated: usize,
    reference: usize,
    convention: MetricConvention,
) -> TaskMetrics {
    if generated == 0 || reference == 0 {
        log::warn!("metrics undefined for {generated} generated / {reference} reference items; using 0");
        return TaskMetrics::ZERO;
    }
    let mass = matching.total_weight();
    let per_generated = mass / generated as f64;
    let per_reference = mass / reference as f64;
    match convention {
        MetricConvention::ReferencePrecision => TaskMetrics::from_precision_recall(per_reference, per_generated),
        MetricConvention::Bertscore => TaskMetrics::from_precision_recall(per_generated, per_reference),
    }
}
