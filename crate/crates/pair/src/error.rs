use thiserror::Error;

/// Toolkit-wide error type. Variants are grouped so the CLI can map them
/// onto its exit codes (usage = 1, data/validation = 2, numeric = 3).
#[derive(Debug, Error)]
pub enum PairError {
    #[error("{path}:{line}: malformed record: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dangling id reference: {0}")]
    DanglingId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("bad embedding store: {0}")]
    BadStore(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PairError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        PairError::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PairError::InvalidArgument(_) => 1,
            PairError::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PairError>;
