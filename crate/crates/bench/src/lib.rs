//! Benchmark harness for the `warpu` crate: target suite with ground truths,
//! sample-quality metrics, JSON experiment configs and a deterministic runner.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod targets;

pub use config::ExperimentConfig;
pub use error::BenchError;
pub use experiment::{run_experiment, write_report, ExperimentReport};
pub use targets::{make_target, BenchTarget, TargetSpec};
