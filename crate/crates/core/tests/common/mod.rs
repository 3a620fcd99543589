//! Shared oracles for the integration tests.
#![allow(dead_code)]

use goalchain_core::evaluation::{EvalCell, EvalReport, MatchingResult, MetricConvention, TaskEvaluation, TaskMetrics};
use goalchain_core::prompting::{ShotStrategy, Stage};

type Pair = (usize, usize);

/// Maximum summed weight over all injective assignments of
/// `min(rows, cols)` pairs, by exhaustive enumeration. Each candidate total
/// is summed in increasing row order, the same order the matcher reports
/// its arcs in, so optimal totals compare exactly.
pub fn brute_force_max(m: &[Vec<f64>]) -> f64 {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    let mut pairs = Vec::new();
    if rows <= cols {
        enumerate(rows, cols, &mut vec![false; cols], &mut pairs, &mut |p| {
            best = best.max(p.iter().map(|&(r, c)| m[r][c]).fold(0.0, |a, v| a + v));
        });
    } else {
        enumerate(cols, rows, &mut vec![false; rows], &mut pairs, &mut |p| {
            let mut arcs: Vec<(usize, usize)> = p.iter().map(|&(c, r)| (r, c)).collect();
            arcs.sort_unstable();
            best = best.max(arcs.iter().map(|&(r, c)| m[r][c]).fold(0.0, |a, v| a + v));
        });
    }
    best
}

/// Calls `visit` with every injective map from `0..small` into `0..large`,
/// as `(small_index, large_index)` pairs in `small_index` order.
fn enumerate(
    small: usize,
    large: usize,
    used: &mut Vec<bool>,
    pairs: &mut Vec<(usize, usize)>,
    visit: &mut dyn FnMut(&[Pair]),
) {
    let i = pairs.len();
    if i == small {
        visit(pairs);
        return;
    }
    for j in 0..large {
        if !used[j] {
            used[j] = true;
            pairs.push((i, j));
            enumerate(small, large, used, pairs, visit);
            pairs.pop();
            used[j] = false;
        }
    }
}

fn cell(dataset: &str, task: Stage, strategy: ShotStrategy, precision: f64, recall: f64) -> EvalCell {
    EvalCell {
        dataset_id: dataset.into(),
        strategy,
        critic_enabled: true,
        evaluation: TaskEvaluation {
            task,
            metrics: TaskMetrics::from_precision_recall(precision, recall),
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

/// Hand-picked metrics with ties and a half-way rounding case.
pub fn sample_report() -> EvalReport {
    let mut cells = Vec::new();
    let values = [
        (Stage::Actors, [(0.8, 0.6), (0.9, 0.55), (1.0, 0.4)]),
        (Stage::HighLevel, [(0.7, 0.6), (0.65, 0.65), (0.6, 0.58)]),
        (Stage::LowLevel, [(0.62, 0.61), (0.6, 0.6), (0.555, 0.5)]),
    ];
    for (task, per_strategy) in values {
        for (strategy, (p, r)) in ShotStrategy::ALL.into_iter().zip(per_strategy) {
            cells.push(cell("genome_nexus", task, strategy, p, r));
        }
    }
    EvalReport::new(MetricConvention::ReferencePrecision, cells).unwrap()
}
