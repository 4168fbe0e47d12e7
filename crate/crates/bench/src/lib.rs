//! Criterion benchmarks for chaincount-core; see `benches/`.
