//! Experiment runner for `robust-stream`: JSON configs, seeded trial
//! batches, per-trial CSV transcripts, summaries and the space report.

pub mod config;
pub mod report;
pub mod run;

use thiserror::Error;

pub use config::{ExperimentConfig, Mode};
pub use report::{space_report, SpaceReport};
pub use run::{run_experiment, Experiment, MetricsSummary, TrialMetrics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit code: 1 config, 2 protocol, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Protocol(_) => 2,
            HarnessError::Io(_) => 3,
        }
    }
}
