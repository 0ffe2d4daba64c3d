//! Evaluation: metrics, suites and the comparison harness.

pub mod metrics;
pub mod harness;
pub mod suites;
