//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (sizes, ranges, finiteness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Welch test with zero variance on both sides and equal adjusted means.
    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    /// A statistic has no defined value for the given data (e.g. zero within-group variance).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// A calibrator could not be fitted (e.g. only one class present).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// More sequential batches were observed than the alpha-spending schedule has stages.
    #[error("alpha-spending schedule exhausted after {stages} stages")]
    ScheduleExhausted { stages: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file. `row` is 1-based and counts data rows (header excluded).
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(row: usize, column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column: column.into(),
            message: message.into(),
        }
    }
}
