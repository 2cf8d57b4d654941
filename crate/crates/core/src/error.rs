use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("taxonomy load error at row {row}: {message}")]
    TaxonomyLoad { row: usize, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("generation error for {spec}: {message}")]
    Generation { spec: String, message: String },

    #[error("llm client error: {0}")]
    Client(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("degenerate embedding: projection norm {0:e} is not above epsilon")]
    DegenerateEmbedding(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("index error: {0}")]
    Index(String),

    #[error("missing prerequisite artifact: {0}")]
    MissingArtifact(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
