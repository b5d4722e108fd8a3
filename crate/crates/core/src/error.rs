use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimensions {width}x{height} are not divisible by factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    NearPiRotation { angle: f64 },

    #[error("point lands behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
