use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("class {class_name} (id {class_id}) has {count} records, need at least {needed}")]
    ClassTooSmall {
        class_id: u32,
        class_name: String,
        count: usize,
        needed: usize,
    },

    #[error("split fractions must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    BadFractions(f64, f64, f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("signal too short: {len} samples, need more than {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("no transient detected{}", match .record { Some(id) => format!(" in record {id}"), None => String::new() })]
    NoTransient { record: Option<String> },

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("shape mismatch in branch {branch}, layer {layer}: {detail}")]
    LayerShape {
        branch: String,
        layer: String,
        detail: String,
    },

    #[error("forward cache is stale (cache version {cache}, model version {model})")]
    StaleCache { cache: u64, model: u64 },

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Divergence {
        epoch: usize,
        last_finite: Option<usize>,
    },

    #[error("model file checksum mismatch or truncated file")]
    Checksum,

    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model format (version {version}) parse error: {detail}")]
    ModelFormat { version: u32, detail: String },

    #[error("class map mismatch: {0}")]
    ClassMapMismatch(String),

    #[error("{0}")]
    Attribution(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.to_string(),
        }
    }

    /// True for failures caused by numerics rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite { .. })
    }
}
