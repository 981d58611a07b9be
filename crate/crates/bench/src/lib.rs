//! Criterion benchmarks for `kinlab`; see `benches/kernels.rs`.
