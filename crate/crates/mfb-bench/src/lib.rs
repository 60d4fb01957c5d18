//! Benchmark-only crate; see `benches/hot_loops.rs`.
