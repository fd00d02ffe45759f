//! Criterion benchmarks for the estimation paths; run with `cargo bench -p w2s-bench`.
