use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants double as the error classes the CLI maps to exit codes:
/// `Input`/`Shape`/`Manifest`/`Payload`/`Io` are data problems,
/// `Numerical` and `Training` are numerical-consistency failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical consistency: {0}")]
    Numerical(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("payload error: {0}")]
    Payload(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
