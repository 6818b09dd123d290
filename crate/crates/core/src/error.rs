use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TwistError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TwistError {
    #[error("invalid token {token} for codebook of size {codebook_size}")]
    InvalidToken { token: u32, codebook_size: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("budget of {budget} is infeasible, at least {required} is required")]
    Infeasible { required: u64, budget: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("stale artifact: {0}")]
    ArtifactMismatch(String),

    #[error("offline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<TwistError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TwistError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            TwistError::Infeasible { .. } => 3,
            TwistError::ArtifactMismatch(_) => 4,
            TwistError::Stage { source, .. } => source.exit_code(),
            TwistError::Io(_) | TwistError::Csv(_) => 1,
            _ => 2,
        }
    }
}
