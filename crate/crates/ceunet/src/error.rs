//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("load error: {0}")]
    Load(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("dimension error: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("divergence error: {0}")]
    Divergence(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("cluster {cluster} has {size} samples, below the minimum {min} (all sizes: {sizes:?})")]
    SmallCluster {
        cluster: usize,
        size: usize,
        min: usize,
        sizes: Vec<usize>,
    },

    #[error("weight error: {0}")]
    Weight(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dimension(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Dimension {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn in_trial(self, trial: usize) -> Self {
        Error::Trial {
            trial,
            source: Box::new(self),
        }
    }
}
