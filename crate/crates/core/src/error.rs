use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt data: {0}")]
    Corruption(String),
    #[error("unsupported version: {0}")]
    Version(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("model incompatible with feature stack: {0}")]
    ModelCompatibility(String),
    #[error("not enough {class} voxels to sample: need {needed}, found {available}")]
    Shortfall {
        class: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("block {index} failed")]
    Block {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data rather
    /// than bad arguments.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Parameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
