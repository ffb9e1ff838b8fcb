//! Criterion benchmarks for the encoder live in `benches/`.
