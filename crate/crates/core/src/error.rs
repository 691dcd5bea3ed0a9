use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: offset {offset} is beyond the text length {len}")]
    OutOfBounds { line: usize, offset: usize, len: usize },

    #[error("line {line}: unknown entity class `{name}`")]
    UnknownClass { line: usize, name: String },

    #[error("line {line}: unknown tag `{name}`")]
    UnknownTag { line: usize, name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("instance too large for exhaustive enumeration: {paths} paths")]
    TooLarge { paths: f64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
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
