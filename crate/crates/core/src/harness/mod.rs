//! Experiment orchestration: configs, replicated runs, aggregation, result
//! files, comparisons and diagnostic reports.

pub mod compare;
pub mod config;
pub mod diagnose;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use compare::{compare_runs, Comparison};
pub use config::{parse_arms, ExperimentConfig, Overrides};
pub use diagnose::{audit_ipase, diagnose, DiagnosticReport};
pub use output::{emit_outputs, load_result, AggregateResult};
pub use run::{run_experiment, run_replicate, ReplicateResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed result file {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("replicate {replicate} (master seed {seed}): {message}")]
    Replicate {
        replicate: u64,
        seed: u64,
        message: String,
    },
    #[error("runs are not comparable: {0}")]
    Mismatch(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code for this category of failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Format { .. } => 4,
            HarnessError::Replicate { .. } => 5,
            HarnessError::Mismatch(_) => 6,
        }
    }
}
