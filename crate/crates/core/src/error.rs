use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("identity {identity:?} appears in both {first} and {second}")]
    SplitOverlap {
        identity: String,
        first: String,
        second: String,
    },

    #[error("cannot split {identities} identities into {non_empty} non-empty splits")]
    TooFewIdentities { identities: usize, non_empty: usize },

    #[error("no eligible auxiliary source for identities: {}", .0.join(", "))]
    AuxPairing(Vec<String>),

    #[error("input error for {path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("embedding backend {backend_id}: {message}")]
    Extraction { backend_id: String, message: String },

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cache checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by malformed user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::SplitOverlap { .. }
                | Error::TooFewIdentities { .. }
                | Error::AuxPairing(_)
                | Error::InvalidArgument(_)
                | Error::Shape(_)
                | Error::UndefinedAuc(_)
        )
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
