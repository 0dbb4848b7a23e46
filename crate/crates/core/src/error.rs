use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown area id `{0}`")]
    UnknownArea(String),
    #[error("self-loop on area `{0}`")]
    SelfLoop(String),
    #[error("duplicate area id `{0}`")]
    DuplicateArea(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("constraint matrix is rank deficient")]
    RankDeficientConstraints,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("linear predictor overflow: {0}")]
    Overflow(String),
    #[error("approximation failed at theta = {theta:?}: {reason}")]
    ApproximationFailed { theta: Vec<f64>, reason: String },
    #[error("hyperparameter mode search did not converge after {evaluations} evaluations")]
    NonConvergence {
        evaluations: usize,
        trace: Vec<f64>,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("{path}:{row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerical engine (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::RankDeficientConstraints
                | Error::Overflow(_)
                | Error::ApproximationFailed { .. }
                | Error::NonConvergence { .. }
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
