use thiserror::Error;

/// Errors raised by the model, preprocessing, solver and file layers.
#[derive(Debug, Error)]
pub enum DotError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no shared genes between reference and spatial data")]
    NoSharedGenes,

    #[error("non-finite value in the {term} term")]
    NonFinite { term: &'static str },

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DotError> = std::result::Result<T, E>;

impl DotError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        DotError::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DotError::InvalidInput(msg.into())
    }
}
