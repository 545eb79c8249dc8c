use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, fields or settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// API misuse such as a non-scalar backward root or wrong input shape.
    #[error("usage error: {0}")]
    Usage(String),
    /// Invalid sample data (degenerate inter-ocular distance, landmarks out of bounds, ...).
    #[error("data error: {0}")]
    Data(String),
    /// NaN or infinity produced by a primitive.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Data(_) => 4,
            Error::Numeric(_) => 5,
            Error::Parse { .. } => 6,
            Error::Io { .. } | Error::Image { .. } => 7,
        }
    }
}
