use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operands live on different Gaussian spaces")]
    SpaceMismatch,

    #[error("degree {degree} exceeds the degree cap {cap}")]
    DegreeOverflow { degree: u32, cap: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}
