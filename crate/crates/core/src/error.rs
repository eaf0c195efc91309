use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Checkpoint(_) | Error::Io { .. } | Error::Image { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Invariant(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
