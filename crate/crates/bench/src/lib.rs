//! Criterion benchmarks for the pipeline hot paths live under `benches/`.
//! This crate intentionally exports nothing.
