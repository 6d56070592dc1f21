use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which side of an episode a sampling failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeSide {
    SpeakerPositive,
    SpeakerNegative,
    ListenerPositive,
    ListenerNegative,
}

impl std::fmt::Display for EpisodeSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EpisodeSide::SpeakerPositive => "speaker positives",
            EpisodeSide::SpeakerNegative => "speaker negatives",
            EpisodeSide::ListenerPositive => "listener positives",
            EpisodeSide::ListenerNegative => "listener negatives",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("capacity error: {needed} objects exceeds enumeration cap {cap}")]
    Capacity { needed: u128, cap: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("sampling error: need {needed} {side}, only {available} available")]
    Sampling {
        side: EpisodeSide,
        needed: usize,
        available: usize,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint incompatible with runtime configuration: {0}")]
    Compatibility(String),

    #[error("invalid checkpoint: {0}")]
    Format(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of what was being done.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
