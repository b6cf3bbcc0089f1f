use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A record references an id that does not exist.
    #[error("integrity error: {record} {record_id} references unknown {target} {target_id}")]
    Integrity {
        record: &'static str,
        record_id: u64,
        target: &'static str,
        target_id: u64,
    },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("malformed results: {0}")]
    MalformedResults(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("frame {got} is not after previous frame {previous}")]
    OutOfOrderFrame { previous: i64, got: i64 },

    #[error("segment bank is empty")]
    EmptyBank,

    #[error("segment asset {0} has a zero-area box")]
    ZeroAreaAsset(u64),

    #[error("placement references unknown asset {0}")]
    UnknownAsset(u64),

    #[error("batch has no matched samples")]
    EmptyBatch,

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An internal consistency check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::Image { .. } => "image",
            Error::Integrity { .. } => "integrity",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::InvalidBox(_) => "invalid_box",
            Error::MalformedResults(_) => "malformed_results",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::OutOfOrderFrame { .. } => "out_of_order_frame",
            Error::EmptyBank => "empty_bank",
            Error::ZeroAreaAsset(_) => "zero_area_asset",
            Error::UnknownAsset(_) => "unknown_asset",
            Error::EmptyBatch => "empty_batch",
            Error::Diverged { .. } => "diverged",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Invariant(_) => "invariant",
        }
    }
}
