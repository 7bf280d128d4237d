use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values or an unparseable config file.
    #[error("configuration error: {0}")]
    Config(String),
    /// An API contract was violated by the caller (wrong shapes, stepping a
    /// finished episode, stale activations, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values appeared during training.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
