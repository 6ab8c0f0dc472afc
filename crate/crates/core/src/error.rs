use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prior: {field}: {reason}")]
    InvalidPrior { field: String, reason: String },

    #[error("unsupported prior: {0}")]
    UnsupportedPrior(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver failure: {message} (worst residual {worst_residual:.3e})")]
    Solver {
        message: String,
        worst_residual: f64,
    },

    #[error("enumeration too large: {configs} configurations exceeds the limit of {limit}")]
    EnumerationTooLarge { configs: f64, limit: u64 },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn prior(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidPrior {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
