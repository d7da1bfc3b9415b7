//! Criterion benchmarks for the model, TransE and the metrics live under
//! `benches/`.
