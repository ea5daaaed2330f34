use thiserror::Error;

/// Errors produced by the estimation, simulation and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate fold {fold}: arm {arm} has no observations")]
    DegenerateFold { fold: usize, arm: u8 },

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown method `{name}`; available: {available}")]
    UnknownMethod { name: String, available: String },

    #[error("{failed} of {total} replications failed for {method}; aborting")]
    TooManyFailures { method: String, failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used when failed replications are tallied.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateFold { .. } => "degenerate_fold",
            Error::DegenerateStatistic(_) => "degenerate_statistic",
            Error::Numerical(_) => "numerical",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::UnknownMethod { .. } => "unknown_method",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
