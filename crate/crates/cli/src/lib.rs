//! Scenario files, seeded instance families, oracle verification and
//! benchmarks around the `storage-lagrange` solver.

pub mod alloc_probe;
pub mod bench;
pub mod commands;
pub mod scenario;
