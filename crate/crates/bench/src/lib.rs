//! Criterion benchmarks for the likelihood, basis evaluation and the sampler.
//! Run with `cargo bench -p sizeshape-bench`.
