//! Benchmarks for regkit live under `benches/`.
