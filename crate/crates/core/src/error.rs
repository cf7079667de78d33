use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "training did not converge after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("teacher {index}: {source}")]
    Teacher {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("no noisy runs supplied")]
    EmptyRuns,

    #[error("group {group} has no samples")]
    GroupCoverage { group: usize },

    #[error("at least two groups are required, found {0}")]
    TooFewGroups(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// True when the error stems from user-supplied configuration rather
    /// than from a failure while running.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Schema(_)
            | Error::InvalidParameter(_)
            | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
