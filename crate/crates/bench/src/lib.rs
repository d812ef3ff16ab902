//! Criterion benchmarks for the simulation and transform kernels; see `benches/`.
