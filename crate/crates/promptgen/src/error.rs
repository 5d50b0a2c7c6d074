use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Every candidate example for some slot mentions the query class.
    #[error("class `{class}`, view {view}: no example left that avoids the query class")]
    PoolExhausted { class: String, view: usize },
    #[error("class `{class}`, view {view}: request failed: {message}")]
    Request {
        class: String,
        view: usize,
        message: String,
    },
    #[error("class `{class}`, view {view}: model returned an empty generation")]
    EmptyGeneration { class: String, view: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] i2mv_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
