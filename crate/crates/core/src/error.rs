use std::path::PathBuf;

use crate::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{pool} pool exhausted: requested {requested}, available {available}")]
    PoolExhausted {
        pool: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("class {class} has budget {budget} but occurs in {occurrences} tasks")]
    InsufficientBudget {
        class: ClassId,
        budget: u64,
        occurrences: u64,
    },

    #[error("dataset class {class} is short by {shortfall} samples")]
    InsufficientSamples { class: ClassId, shortfall: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cannot apply an update to a frozen model")]
    FrozenModel,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("threshold already set")]
    ThresholdAlreadySet,

    #[error("threshold accuracy {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("test set of task {0} is empty")]
    EmptyTestSet(usize),

    #[error("accuracy matrix is incomplete")]
    IncompleteMatrix,

    #[error("class means are empty")]
    EmptyClassMeans,

    #[error("task {task}: {source}")]
    InTask {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task {task}, batch {batch}: {source}")]
    InBatch {
        task: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_task(self, task: usize) -> Self {
        Error::InTask {
            task,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_batch(self, task: usize, batch: usize) -> Self {
        Error::InBatch {
            task,
            batch,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 for configuration errors, 2 for data errors,
    /// 3 for runtime divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InTask { source, .. } | Error::InBatch { source, .. } => source.exit_code(),
            Error::Divergence(_) => 3,
            Error::Data(_)
            | Error::InsufficientSamples { .. }
            | Error::DimensionMismatch { .. }
            | Error::EmptyTestSet(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
