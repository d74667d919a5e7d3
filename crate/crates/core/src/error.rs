use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (e.g. a non-positive price).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration or argument failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("series has {} missing hour(s): {}", .missing.len(), .missing.join(", "))]
    Gap { missing: Vec<String> },

    /// A caller broke an operation's contract (stepping a finished episode, bad action index).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at update {update}: {detail}")]
    Divergence { update: usize, detail: String },

    /// Every candidate agent of a window failed to train.
    #[error("window {window} failed: {detail}")]
    TrainingFailed { window: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
