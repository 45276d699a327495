use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum ApsError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}, column `{column}`: {message}")]
    Validation {
        /// 1-based data row (header excluded).
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("degenerate outcome: all values equal {0}")]
    DegenerateOutcome(f64),

    #[error("fold error: {0}")]
    Fold(String),

    #[error("subgroup error: {0}")]
    Subgroup(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("estimand error: {0}")]
    Estimand(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ApsError> = std::result::Result<T, E>;
