use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Cholesky factorization hit a non-positive pivot (1-based index).
    #[error("not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("isolated node {0}")]
    IsolatedNode(usize),

    #[error("objective non-finite at start")]
    NonFiniteStart,

    #[error("Hessian not negative definite")]
    HessianNotNegativeDefinite,

    #[error("outcome enumeration of size {size} exceeds budget {budget}")]
    BudgetExceeded { size: f64, budget: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
