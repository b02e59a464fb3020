//! Criterion benchmarks for `matgamma`; see `benches/`.
