//! Experiment driver: seed matrices of DQN and MOHQA runs on the CT-graph,
//! per-episode CSV logs, smoothed learning curves across seeds and the
//! analytic environment oracles.

pub mod aggregate;
pub mod experiment;
pub mod oracle;

use std::path::PathBuf;

use thiserror::Error;

pub use aggregate::{aggregate_agent, plotdata, read_run_csv, trailing_mean, CurvePoint, WINDOW};
pub use experiment::{run_experiment, seed_csv_path, ExperimentOutput, ExperimentSpec};
pub use oracle::{oracle_report, OracleReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] mohqa_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("bad input: {0}")]
    Input(String),
    #[error("{failed} of {total} runs aborted; completed runs were kept")]
    RunsAborted { failed: usize, total: usize },
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for anything
    /// that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(mohqa_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Csv { path, source }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Floats in every CSV: 17 significant digits, enough for an exact round trip.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}
