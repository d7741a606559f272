//! Benchmark harness for the synthetic-image detectors: corpus synthesis,
//! training, evaluation, robustness sweeps and artifact inspection.

pub mod commands;
pub mod config;
pub mod detector;
pub mod error;
pub mod report;

pub use config::BenchConfig;
pub use error::{BenchError, BenchResult};
