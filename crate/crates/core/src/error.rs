use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("zero-norm embedding for token {token:?}")]
    ZeroNormEmbedding { token: String },

    #[error("duplicate token {token:?} (lines {first} and {second})")]
    DuplicateToken {
        token: String,
        first: usize,
        second: usize,
    },

    #[error("empty embedding file")]
    EmptyEmbeddings,

    #[error("embedding store needs at least two tokens, found {0}")]
    VocabularyTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("out-of-vocabulary token {0:?}")]
    OutOfVocabulary(String),

    #[error("zero-norm input vector")]
    ZeroNormInput,

    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("continued fraction did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("binary cache: {0}")]
    Cache(String),

    #[error("decode backend: {0}")]
    Backend(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
