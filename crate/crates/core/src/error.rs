use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Operands live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    /// A solver failed or a numerical invariant was broken.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Problem size exceeds a configured cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
