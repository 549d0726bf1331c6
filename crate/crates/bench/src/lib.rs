//! Benchmark-only package; see `benches/solver.rs`.
