use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm embedding row {row} in {branch} branch; cosine similarity is undefined")]
    ZeroNorm { row: usize, branch: &'static str },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid pair: sample {0} cannot be its own positive")]
    InvalidPair(usize),

    #[error("token id {id} is outside the vocabulary (size {size})")]
    OutOfVocabulary { id: u32, size: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error at {}: {reason}", path.display())]
    Dataset { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("matrix square root failed: {0}")]
    MatrixSqrt(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dataset(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
