//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FetildaError {
    #[error(transparent)]
    Num(#[from] numcore::NumError),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("chunking error: {0}")]
    Chunk(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("{path}:{line}: {message}")]
    ParseLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("embedding file error: {0}")]
    EmbeddingFile(String),

    #[error("document pooling error: {0}")]
    DocPool(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("baseline model error: {0}")]
    Baseline(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FetildaError>;
