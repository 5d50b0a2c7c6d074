use std::path::PathBuf;

use i2mv_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file does not follow its layout. `at` is a line number for text
    /// formats and a byte offset for binary ones.
    #[error("{path}: {at}: {message}")]
    Format {
        path: String,
        at: String,
        message: String,
    },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("class `{class}`: view has no in-vocabulary tokens")]
    EmptyView { class: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("split violation: {0}")]
    SplitLeak(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl std::fmt::Display,
        at: impl std::fmt::Display,
        message: impl Into<String>,
    ) -> Self {
        Self::Format {
            path: path.to_string(),
            at: at.to_string(),
            message: message.into(),
        }
    }

    /// True for errors caused by input files rather than configuration or
    /// runtime failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Self::Io { .. }
                | Self::Format { .. }
                | Self::Validation(_)
                | Self::Duplicate { .. }
                | Self::EmptyView { .. }
                | Self::Shape(_)
                | Self::SplitLeak(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
