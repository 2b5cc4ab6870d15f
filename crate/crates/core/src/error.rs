use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("landmark alignment failed: ray for keypoint {index} missed the mesh")]
    AlignmentFailure { index: usize },

    #[error("provider has no target for camera {0}")]
    MissingTarget(String),

    #[error("provider does not support `{0}`")]
    UnsupportedCapability(&'static str),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("{path}: malformed file: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config validation failed for `{field}`: {message}")]
    ConfigValidation { field: String, message: String },

    #[error("{stage} stage failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn from_io(e: std::io::Error) -> Self {
        Error::Stream(e)
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, iteration: usize) -> Self {
        Error::Stage {
            stage,
            iteration,
            source: Box::new(self),
        }
    }
}
