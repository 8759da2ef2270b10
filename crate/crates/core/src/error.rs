use thiserror::Error;

/// Errors raised by the unmixing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnmixError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("pixel is nearly orthogonal to the projection vector (|x'u| = {0:e})")]
    NearOrthogonal(f64),

    #[error("extraction failed: {0}")]
    Extraction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, UnmixError>;
