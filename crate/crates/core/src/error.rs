use thiserror::Error;

/// Errors raised anywhere in the adaptation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index out of range: {index} (len {len})")]
    Index { index: usize, len: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("undefined: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;
