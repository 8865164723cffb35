//! Experiment harness for the predictive-coding engine: dataset ingestion,
//! synthetic generators, flat-file configuration, experiment drivers, and
//! deterministic CSV metric reporting.
//!
//! All randomness flows from the configured seed through seeded generators;
//! two runs of the same configuration differ only in the CSV timestamp
//! column.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod idx;

use pc_core::PcError;

/// Harness-level error; each class maps to a documented exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or inconsistent configuration (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem failure (exit code 3).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed data file (exit code 4).
    #[error("data format error: {0}")]
    Format(#[from] idx::IdxError),
    /// Numerical failure inside the engine (exit code 5).
    #[error("compute error: {0}")]
    Compute(#[from] PcError),
}

impl CliError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Format(_) => 4,
            CliError::Compute(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
