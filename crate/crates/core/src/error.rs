use thiserror::Error;

/// Errors produced by the library.
///
/// Variants split into two families: validation failures (bad input, bad
/// configuration) and numerical failures (an algorithm could not produce a
/// trustworthy answer). The CLI maps them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("not enough data: {n} records, at least {required} required")]
    InsufficientData { n: usize, required: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("quadrature did not converge (estimate {estimate:e}, error bound {error:e})")]
    QuadratureNonConvergence { estimate: f64, error: f64 },

    #[error("assignment is not a bijection: map {assignment:?}, distances {distances:?}")]
    NonBijectiveAssignment { assignment: Vec<usize>, distances: Vec<Vec<f64>> },

    #[error("EM failed: {0}")]
    EmFailure(String),

    #[error("enumeration of {count} items exceeds the guard of {limit}")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("token {token} outside alphabet of size {size}")]
    TokenOutOfAlphabet { token: usize, size: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure is numerical rather than a problem with the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::QuadratureNonConvergence { .. } | Error::NonBijectiveAssignment { .. } | Error::EmFailure(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
