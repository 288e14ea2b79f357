use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("bad magic bytes in {path}: expected VXL1")]
    BadMagic { path: PathBuf },

    #[error("dimension mismatch in {path}: {detail}")]
    DimensionMismatch { path: PathBuf, detail: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("camera: {0}")]
    Camera(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// Stable machine-readable kind, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidVolume(_) => "invalid_volume",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::BadMagic { .. } => "bad_magic",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::TruncatedPayload { .. } => "truncated_payload",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::Camera(_) => "camera",
            Error::Empty(_) => "empty",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
