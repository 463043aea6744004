//! Criterion benchmarks for vcsim-core live under `benches/`.
