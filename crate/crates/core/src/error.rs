use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("class hierarchy contains a cycle through `{0}`")]
    Cycle(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("image `{image_id}` lists class `{class}` as both verified positive and verified negative")]
    Conflict { image_id: String, class: String },

    #[error("co-occurrence pair uses `{0}` as both subject and part")]
    SelfPair(String),

    #[error("no proposals supplied")]
    EmptyProposals,

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite logit at ({row}, {col})")]
    NonFiniteLogit { row: usize, col: usize },

    #[error("detections span more than one (image, class) group")]
    MixedGroup,

    #[error("{0}")]
    Domain(String),

    #[error("run `{run}` emits class `{class}` but has no validation score for it")]
    MissingScore { run: String, class: String },

    #[error("no ensemble weight for run `{run}`, class `{class}`")]
    MissingWeight { run: String, class: String },

    #[error("run `{run}` emits class `{class}` outside its class subset")]
    SubsetViolation { run: String, class: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
