//! Criterion benchmarks for the sampling and walk kernels; see `benches/`.
