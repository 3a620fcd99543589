//! Criterion benchmarks for the evaluation hot paths; see `benches/`.
