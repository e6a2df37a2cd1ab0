use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate post_id: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("zero-norm embedding for post_id {0}")]
    ZeroNorm(String),

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lexicon: {0}")]
    Lexicon(String),

    #[error("extractor: {0}")]
    Extractor(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("optimizer did not converge after {iterations} iterations (last |grad| = {last_gradient:e})")]
    NonConvergence {
        iterations: usize,
        last_gradient: f64,
        trace: Vec<(usize, f64, f64)>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
