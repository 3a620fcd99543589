//! Similarity matrices and maximum-weight bipartite matching.

use serde::{Deserialize, Serialize};

use super::embed::{cosine, EmbeddingSet};
use super::EvalError;

/// Rows are generated items, columns reference items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(EvalError::InvalidMatrix("ragged rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EvalError::InvalidMatrix("non-finite entry".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    /// An empty matrix with the given shape's row and column counts, one of
    /// which is zero.
    pub fn empty(rows: usize, cols: usize) -> Self {
        assert!(rows == 0 || cols == 0, "empty matrix must have a zero dimension");
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    fn transposed(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                entries.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }
}

/// Cosine similarity between every generated and every reference embedding.
pub fn similarity_matrix(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<SimilarityMatrix, EvalError> {
    let mut entries = Vec::with_capacity(x.len() * y.len());
    for xi in &x.items {
        for yj in &y.items {
            if xi.vector.dimension() != yj.vector.dimension() {
                return Err(EvalError::DimensionMismatch {
                    left: xi.vector.dimension(),
                    right: yj.vector.dimension(),
                });
            }
            let sim = cosine(&xi.vector, &yj.vector).ok_or_else(|| {
                let which = if xi.vector.is_zero() { &xi.original } else { &yj.original };
                EvalError::ZeroVector(which.clone())
            })?;
            entries.push(sim);
        }
    }
    Ok(SimilarityMatrix {
        rows: x.len(),
        cols: y.len(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchArc {
    pub generated: usize,
    pub reference: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingResult {
    /// Sorted by generated index.
    pub arcs: Vec<MatchArc>,
    pub unmatched_generated: Vec<usize>,
    pub unmatched_reference: Vec<usize>,
}

impl MatchingResult {
    pub fn total_weight(&self) -> f64 {
        self.arcs.iter().map(|a| a.similarity).sum()
    }
}

/// Hungarian algorithm with row/column potentials on `rows <= cols`;
/// returns the column assigned to each row. Minimises the summed cost.
/// Ties resolve toward the lowest column index scanned first.
fn assign_min_cost(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(rows <= cols);
    // 1-based with a sentinel column 0, as in the classic formulation.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for row in 1..=rows {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_slack = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[col0] = true;
            let row0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=cols {
                if used[col] {
                    continue;
                }
                let slack = cost(row0 - 1, col - 1) - u[row0] - v[col];
                if slack < min_slack[col] {
                    min_slack[col] = slack;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=cols {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; rows];
    for col in 1..=cols {
        if owner[col] != 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Pairs generated and reference items so that the summed similarity is
/// maximal over all injective assignments of size `min(rows, cols)`.
pub fn max_weight_matching(matrix: &SimilarityMatrix) -> MatchingResult {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let mut pairs: Vec<(usize, usize)> = if rows == 0 || cols == 0 {
        Vec::new()
    } else if rows <= cols {
        assign_min_cost(rows, cols, |r, c| -matrix.get(r, c))
            .into_iter()
            .enumerate()
            .collect()
    } else {
        let t = matrix.transposed();
        assign_min_cost(cols, rows, |r, c| -t.get(r, c))
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let arcs = pairs
        .into_iter()
        .map(|(r, c)| {
            row_used[r] = true;
            col_used[c] = true;
            MatchArc {
                generated: r,
                reference: c,
                similarity: matrix.get(r, c),
            }
        })
        .collect();
    MatchingResult {
        arcs,
        unmatched_generated: (0..rows).filter(|r| !row_used[*r]).collect(),
        unmatched_reference: (0..cols).filter(|c| !col_used[*c]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::embed::{EmbeddedItem, EmbeddingVector, Side};

    fn set(side: Side, vectors: &[&[f64]]) -> EmbeddingSet {
        EmbeddingSet {
            side,
            items: vectors
                .iter()
                .map(|v| EmbeddedItem {
                    original: String::new(),
                    preprocessed: String::new(),
                    vector: EmbeddingVector(v.to_vec()),
                })
                .collect(),
        }
    }

    fn single(x: &[f64], y: &[f64]) -> f64 {
        similarity_matrix(&set(Side::Generated, &[x]), &set(Side::Reference, &[y]))
            .unwrap()
            .get(0, 0)
    }

    #[test]
    fn cosine_entries() {
        assert_eq!(single(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(single(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(single(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
    }

    #[test]
    fn matrix_errors() {
        let x = set(Side::Generated, &[&[1.0, 0.0]]);
        assert!(matches!(
            similarity_matrix(&x, &set(Side::Reference, &[&[1.0]])),
            Err(EvalError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            similarity_matrix(&x, &set(Side::Reference, &[&[0.0, 0.0]])),
            Err(EvalError::ZeroVector(_))
        ));
        assert!(SimilarityMatrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(SimilarityMatrix::from_rows(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn single_entry() {
        let m = max_weight_matching(&SimilarityMatrix::from_rows(vec![vec![1.0]]).unwrap());
        assert_eq!(m.arcs, vec![MatchArc { generated: 0, reference: 0, similarity: 1.0 }]);
    }

    #[test]
    fn square_two_by_two() {
        let m = max_weight_matching(
            &SimilarityMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap(),
        );
        let pairs: Vec<_> = m.arcs.iter().map(|a| (a.generated, a.reference)).collect();
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert!((m.total_weight() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn more_generated_than_reference() {
        let m = max_weight_matching(
            &SimilarityMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap(),
        );
        let pairs: Vec<_> = m.arcs.iter().map(|a| (a.generated, a.reference)).collect();
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.unmatched_generated, vec![2]);
        assert!(m.unmatched_reference.is_empty());
    }

    #[test]
    fn more_reference_than_generated() {
        let m = max_weight_matching(&SimilarityMatrix::from_rows(vec![vec![0.1, 0.7, 0.3]]).unwrap());
        assert_eq!(m.arcs[0].reference, 1);
        assert_eq!(m.unmatched_reference, vec![0, 2]);
    }

    #[test]
    fn greedy_is_not_optimal_here() {
        // Greedy picks (0,0)=0.9 then (1,1)=0.1; optimum is 0.8 + 0.8.
        let m = max_weight_matching(
            &SimilarityMatrix::from_rows(vec![vec![0.9, 0.8], vec![0.8, 0.1]]).unwrap(),
        );
        assert!((m.total_weight() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn empty_sides() {
        let m = max_weight_matching(&SimilarityMatrix::empty(0, 3));
        assert!(m.arcs.is_empty());
        assert_eq!(m.unmatched_reference, vec![0, 1, 2]);
        let m = max_weight_matching(&SimilarityMatrix::empty(2, 0));
        assert_eq!(m.unmatched_generated, vec![0, 1]);
    }

    #[test]
    fn negative_similarities_still_match_fully() {
        let m = max_weight_matching(
            &SimilarityMatrix::from_rows(vec![vec![-0.5, -0.9], vec![-0.2, -0.1]]).unwrap(),
        );
        assert_eq!(m.arcs.len(), 2);
        assert!((m.total_weight() + 0.6).abs() < 1e-12);
    }
}
