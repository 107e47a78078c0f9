use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate coordinate or score: {0}")]
    Duplicate(String),
    #[error("element not found: {0}")]
    NotFound(String),
    #[error("k out of range: {0}")]
    KOutOfRange(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("parameters do not fit: {0}")]
    Params(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
