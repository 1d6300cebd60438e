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

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("image has zero size")]
    EmptyImage,

    #[error("invalid tensor shape: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-binary value {value} at index {index}")]
    NonBinary { index: usize, value: f64 },

    #[error(transparent)]
    Weights(#[from] WeightError),

    #[error("unknown layer or tap `{0}`")]
    UnknownTap(String),

    #[error(
        "image {height}x{width} is too small for the feature network (need at least {min}x{min})"
    )]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

/// Violations of the binary weight-file layout.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("bad magic {0:?}, expected \"NSTW\"")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}, expected 1")]
    VersionMismatch(u32),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("layer name is not valid UTF-8")]
    InvalidName,

    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),

    #[error("invalid layer shape for `{name}`: {reason}")]
    InvalidShape { name: String, reason: String },
}
