use thiserror::Error;

/// Errors produced by mesh I/O, validation and the variational solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid exponents: {0}")]
    InvalidExponents(String),

    #[error("no positive root: {0}")]
    NoPositiveRoot(String),

    #[error("zero field: {0}")]
    ZeroField(String),

    #[error("empty constraint set: {0}")]
    EmptyConstraintSet(String),

    #[error("manifold is not Yamabe negative: {0}")]
    NotYamabeNegative(String),

    #[error("normalization failed: {0}")]
    NormalizationFailed(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("positivity lost: {0}")]
    PositivityLost(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
