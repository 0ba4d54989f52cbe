use thiserror::Error;

/// Errors surfaced by the coordination engine and its supporting layers.
#[derive(Debug, Error)]
pub enum FabricError {
    #[error("invalid rating parameter: {0}")]
    InvalidRating(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate deviation test: both ratings are point masses")]
    DegenerateDeviation,

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("agent policy failed: {0}")]
    PolicyFailure(String),

    #[error("unknown agent: {0}")]
    UnknownAgent(String),

    #[error("duplicate registration for handle {0}")]
    DuplicateRegistration(String),

    #[error("trace parse error at line {line}: {message}")]
    TraceParse { line: usize, message: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("remote endpoint error: {0}")]
    Remote(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FabricError>;
