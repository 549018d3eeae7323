use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate or non-increasing timestamp at line {line}: {date}")]
    DuplicateTimestamp { line: usize, date: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("numeric error at step {step}: {msg}")]
    Numeric { step: usize, msg: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("optimization failed: {msg} (best ω={omega}, α={alpha}, β={beta}, loglik={loglik})")]
    OptimizationFailure {
        msg: String,
        omega: f64,
        alpha: f64,
        beta: f64,
        loglik: f64,
    },

    #[error("model failure at step {step}: {source}")]
    ModelStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
