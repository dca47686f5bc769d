use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid transition kernel: {0}")]
    InvalidKernel(String),

    #[error("discount factor {0} outside [0, 1)")]
    InvalidDiscount(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient samples: need at least {required}, have {available}")]
    InsufficientSamples { required: usize, available: usize },

    #[error("sample budget of {budget} exhausted before the first epoch (needs {required})")]
    BudgetExhausted { budget: usize, required: usize },

    #[error("policy enumeration needs {required} policies, limit is {limit}")]
    EnumerationBudget { required: u128, limit: u128 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("persisted results do not match: {0}")]
    ResumeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
