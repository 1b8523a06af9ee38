//! Criterion benchmarks for the integration and certification kernels live in `benches/`.
