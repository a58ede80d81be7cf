use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty cohort")]
    EmptyCohort,

    #[error("patient {0} is excluded (transferred to another hospital)")]
    ExcludedPatient(String),

    #[error("class {class} has {count} samples, need at least {required}")]
    TooFewSamples {
        class: &'static str,
        count: usize,
        required: usize,
    },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("feature width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("dataset for day config {0} is empty")]
    EmptyDataset(String),

    #[error("model has no uncertainty threshold; train it with threshold optimization")]
    MissingThreshold,

    #[error("every sampled configuration failed")]
    AllConfigsFailed,

    #[error("config error: {0}")]
    Config(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
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
    Csv(#[from] csv::Error),

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

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
