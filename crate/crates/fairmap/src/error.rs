use thiserror::Error;

/// Errors produced by any fairmap operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid attribute set: {0}")]
    InvalidAttributeSet(String),

    #[error("invalid keyword {keyword:?}: {reason}")]
    InvalidKeyword { keyword: String, reason: String },

    #[error("invalid template {pattern:?}: {reason}")]
    InvalidTemplate { pattern: String, reason: String },

    #[error("unknown attribute word {0:?}")]
    UnknownAttribute(String),

    #[error("attribute word {word:?} belongs to more than one attribute set")]
    AmbiguousAttribute { word: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("duplicate prompt {0:?}")]
    DuplicatePrompt(String),

    #[error("unknown prompt {0:?}")]
    UnknownPrompt(String),

    #[error("unsupported {what} version: expected {expected}, got {got}")]
    VersionMismatch {
        what: String,
        expected: u32,
        got: u32,
    },

    #[error("corrupt {what} ({path}): {msg}")]
    Corrupt {
        what: String,
        path: String,
        msg: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("embeddings file is missing {} prompt(s): {}", .0.len(), .0.join(", "))]
    MissingPrompts(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
