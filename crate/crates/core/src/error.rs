use thiserror::Error;

/// Errors raised by the MDP, divergence, and engine layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or values that violate an input contract.
    #[error("invalid input: {0}")]
    Input(String),
    /// A point where the generator's gradient is undefined (relative boundary of the simplex).
    #[error("domain error: {0}")]
    Domain(String),
    /// A solve or root-find that did not reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The operation is not defined for the requested divergence.
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    /// Enumeration guard tripped.
    #[error("instance too large: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
