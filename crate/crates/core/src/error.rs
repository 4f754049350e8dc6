use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("content space size overflows u64")]
    SizeOverflow,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("value {value} out of range for dimension `{dim}` (cardinality {cardinality})")]
    ValueOutOfRange {
        dim: String,
        value: u32,
        cardinality: u32,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("degenerate validation set: {0}")]
    DegenerateValidation(String),
    #[error("no annotated example for categories: {}", .0.join(", "))]
    MissingCategory(Vec<String>),
    #[error("no trainable data: {0}")]
    NoTrainableData(String),
    #[error("pool exhausted in {0} state")]
    PoolExhausted(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("artifact format version `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { expected: String, found: String },
    #[error("artifact kind mismatch: expected `{expected}`, found `{found}`")]
    KindMismatch { expected: String, found: String },
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs the output of stage `{missing}` ({path})")]
    Dependency {
        stage: String,
        missing: String,
        path: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSchema(_) | Error::InvalidParameter(_) => 2,
            Error::Dependency { .. } => 3,
            Error::DegenerateData(_)
            | Error::DegenerateValidation(_)
            | Error::MissingCategory(_)
            | Error::NoTrainableData(_) => 4,
            _ => 1,
        }
    }
}
