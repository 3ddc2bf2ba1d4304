use std::path::PathBuf;

/// Errors produced anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("unknown prompt id `{0}`")]
    UnknownPrompt(String),

    #[error("unknown response id `{response}` for prompt `{prompt}`")]
    UnknownResponse { prompt: String, response: String },

    #[error("{path}:{line}: field `{field}`: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("sample {index}: {message}")]
    InvalidSample { index: usize, message: String },

    #[error("missing reward for objective {objective} (prompt `{prompt}`, response `{response}`)")]
    MissingReward {
        objective: usize,
        prompt: String,
        response: String,
    },

    #[error("reward vector is missing objective {0}")]
    MissingObjective(usize),

    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("mean gradient of batch `{0}` is zero")]
    ZeroGradient(String),

    #[error("stage {index}: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing input {path}: {source}")]
    MissingInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line driver: 2 configuration,
    /// 3 missing input, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::MissingInput { .. } => 3,
            Error::Divergence { .. } | Error::ZeroGradient(_) => 4,
            _ => 2,
        }
    }
}
