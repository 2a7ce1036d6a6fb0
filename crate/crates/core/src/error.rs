use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("frame {frame} is not after the previously processed frame {previous}")]
    OutOfOrderFrame { frame: u64, previous: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("cost matrix shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("track at row {0} has an empty appearance gallery")]
    EmptyGallery(usize),

    #[error("detection {0} carries no embedding but appearance matching is enabled")]
    MissingEmbedding(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("window length must be at least 2 frames, got {0}")]
    InvalidWindow(u64),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("ambiguous ground truth: {0}")]
    AmbiguousGroundTruth(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

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

    /// Process exit code for this error: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
