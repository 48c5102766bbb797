use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of a mathematical map.
    #[error("domain error: {0}")]
    Domain(String),
    /// A value cannot be represented by the requested inverse map.
    #[error("range error: {0}")]
    Range(String),
    /// A caller supplied malformed arguments (shapes, counts, ids).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Training or sampling produced non-finite numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A checkpoint or pair file could not be decoded.
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
