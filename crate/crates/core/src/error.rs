use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("array file format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid operator spec: {0}")]
    OperatorSpec(String),

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    #[error("inner optimizer failed to converge: {0}")]
    Convergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("training diverged at timestep {timestep}: {message}")]
    TrainingDiverged { timestep: usize, message: String },

    #[error("singular solve: {0}")]
    Singular(String),

    #[error("invalid prior: {0}")]
    Prior(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
