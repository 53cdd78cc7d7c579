//! Criterion benchmarks for the network, loss, generator and metric kernels; see `benches/`.
