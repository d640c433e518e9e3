use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("platoon {platoon_id}: {reason}")]
    InvalidPlatoon { platoon_id: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("collision: vehicle {vehicle} at frame {frame} (gap {gap:.4} m)")]
    Collision {
        vehicle: usize,
        frame: usize,
        gap: f64,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] numgrad::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
