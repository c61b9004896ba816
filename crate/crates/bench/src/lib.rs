//! Criterion benchmarks for the facecloak pipeline live in `benches/`.
