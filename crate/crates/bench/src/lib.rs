//! Criterion benchmarks for fibreforms live in `benches/`; run them with
//! `cargo bench -p fibreforms-bench`.
