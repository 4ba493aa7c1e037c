use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("simulation aborted at t={time:.3}s: {reason}")]
    Simulation { time: f64, reason: String },

    #[error("rejected update: {0}")]
    Rejected(String),

    #[error("checkpoint header is corrupt: {0}")]
    CorruptHeader(String),

    #[error("checkpoint payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("checkpoint config hash {found} does not match config hash {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("checkpoint shape {checkpoint} does not match config shape {config}")]
    CheckpointShape { checkpoint: String, config: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_finite(name: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}
