//! Error types shared across the crate.

/// Errors produced by model construction, solvers, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A physical parameter is outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested geometry or channel layout cannot be realized.
    #[error("configuration error: {0}")]
    Config(String),

    /// A linear solve or matrix inversion failed or is untrustworthy.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A stochastic-integrator parameter violates its stability precondition.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// File or directory I/O failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Serialization or deserialization failed.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
