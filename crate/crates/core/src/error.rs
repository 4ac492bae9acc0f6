use std::path::PathBuf;

/// Errors produced by the biasing toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("target vocabulary size {target} is below the character inventory ({inventory})")]
    VocabTooSmall { target: usize, inventory: usize },

    #[error("unencodable word {word:?}: {reason}")]
    Unencodable { word: String, reason: String },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero probability assigned to target at step {step}")]
    ZeroProbability { step: usize },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("stepping past end of sentence")]
    PastEos,

    #[error("insufficient distractor pool: requested {requested}, available {available}")]
    InsufficientDistractors { requested: usize, available: usize },

    #[error("no biasing list for utterance {0:?}")]
    MissingList(String),

    #[error("zero reference tokens")]
    NoReferenceTokens,

    #[error("empty decode set")]
    EmptyDecodeSet,

    #[error("empty dev set")]
    EmptyDevSet,

    #[error("invalid search setting: {0}")]
    InvalidSearch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
