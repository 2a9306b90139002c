use std::path::PathBuf;

use crate::model::Level;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate item{}: aggregate tokens average to the zero vector",
        .id.map(|id| format!(" {id}")).unwrap_or_default())]
    DegenerateItem { id: Option<u64> },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at level {level}")]
    NonFiniteLoss { level: Level },

    #[error("code index {index} out of range for {bound} codewords")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error(
        "codebook fingerprint mismatch: index built with {expected:016x}, query uses {found:016x}"
    )]
    StaleCodebooks { expected: u64, found: u64 },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }

    /// Attaches a path to a bare I/O error.
    pub fn with_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io(source) => Error::File {
                path: path.into(),
                source,
            },
            other => other,
        }
    }
}
