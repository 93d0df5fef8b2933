//! Criterion benchmarks for the fmd-core kernels live in `benches/`.
