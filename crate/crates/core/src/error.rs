use thiserror::Error;

use crate::autodiff::checkpoint::CheckpointError;
use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation.
    #[error("{field}: {msg}")]
    Config { field: String, msg: String },
    /// Two artifacts (checkpoint, config, path file) do not belong together.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    /// A non-finite value or a singular formula was hit.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Misuse of an operation (day out of range and similar).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Mismatch(_) | Error::Checkpoint(_) => 3,
            Error::Numerical(_) | Error::Autodiff(AutodiffError::NonFiniteGradient { .. }) => 4,
            _ => 1,
        }
    }
}
