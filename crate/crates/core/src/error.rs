use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum BcpnnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid activity: {0}")]
    InvalidActivity(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Signals a bug upstream (e.g. a trace below its floor); not a user error.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("parse error in {file} at offset {offset}: {message}")]
    Parse {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("model container: {0}")]
    Container(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BcpnnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BcpnnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, BcpnnError>;
