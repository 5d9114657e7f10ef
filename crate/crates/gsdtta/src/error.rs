//! Error type shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline. Variants map onto the CLI exit-code
/// table: `InvalidInput`/`Dimension` are usage errors, `Io`/`Parse` are
/// I/O errors, `Numeric` is a numeric failure and `GateFailed` is an
/// accuracy-gate failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("accuracy gate failed: reached {achieved:.4}, required {required:.4}")]
    GateFailed { achieved: f64, required: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
