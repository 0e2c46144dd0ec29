use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("lattice mask selects no voxels")]
    EmptyMask,

    #[error("voxel index {index} out of range for lattice with {n} voxels")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("lattice has {n} voxels; exact enumeration supports at most {max}")]
    TooLargeForEnumeration { n: usize, max: usize },

    #[error("not enough samples: {0}")]
    NotEnoughSamples(String),

    #[error("estimation aborted: {0}")]
    Estimation(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
