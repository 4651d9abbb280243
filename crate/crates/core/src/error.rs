use thiserror::Error;

/// Errors produced anywhere in the model, data, or training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("degenerate {kind} {index}: zero degree")]
    DegenerateDegree { kind: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset error in {location} ({field}): {message}")]
    Dataset { location: String, field: String, message: String },

    #[error("class {0} is absent from the training labels")]
    AbsentClass(usize),

    #[error("training split is empty")]
    EmptyTrainingSplit,

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn dataset(location: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Dataset { location: location.into(), field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
