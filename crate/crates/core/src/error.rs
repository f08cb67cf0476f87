use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },

    #[error("line {line}: {modality} feature has length {got}, manifest expects {expected}")]
    DimMismatch {
        line: usize,
        modality: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("conversation {conversation}: {msg}")]
    InvalidConversation { conversation: String, msg: String },

    #[error("invalid emotion label index {0} (expected 0..=5)")]
    InvalidLabel(i64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("window mismatch: expected {expected}, got {got}")]
    WindowMismatch { expected: usize, got: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unsupported file version {0}")]
    Version(u32),

    #[error("corrupted file: {0}")]
    Corrupted(String),

    #[error("no usable windows: every conversation is shorter than {needed} utterances or unlabeled")]
    NoUsableWindows { needed: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by diverging numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
