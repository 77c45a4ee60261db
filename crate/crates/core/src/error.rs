use thiserror::Error;

/// Errors raised by the token-memory core (features, memory, prompt).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("token count {rows} is not a perfect square")]
    NonSquareTokenGrid { rows: usize },
    #[error("pool factor {alpha} does not divide grid side {side}")]
    IncompatibleScale { alpha: usize, side: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("frame shape {rows}x{cols} does not match configured {expected_rows}x{expected_cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("memory holds no frames")]
    EmptyMemory,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Errors raised by the navigation harness (world, policy, executor, dataset, metrics).
#[derive(Debug, Error)]
pub enum NavError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("goal unreachable from cell {from:?} to {to:?}")]
    Unreachable { from: (usize, usize), to: (usize, usize) },
    #[error("episode generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },
    #[error("degenerate episode: geodesic length {0} must be positive")]
    DegenerateEpisode(f64),
    #[error("no outcomes to aggregate")]
    EmptyInput,
    #[error("missing template slot `{0}`")]
    MissingSlot(String),
    #[error("schema mismatch at line {line}: {message}")]
    SchemaMismatch { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NavError> = std::result::Result<T, E>;
