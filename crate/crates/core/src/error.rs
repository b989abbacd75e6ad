use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{n} components exceeds the enumeration limit of {limit}")]
    TooManyComponents { n: usize, limit: usize },

    #[error("index {index} out of range for {n} components")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid spin value {0} (expected -1 or +1)")]
    InvalidSpin(i64),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("mean {value} at component {index} outside the admissible range")]
    MeanOutOfRange { index: usize, value: f64 },

    #[error("invalid parameters: {0:?}")]
    InvalidParameters(Vec<crate::model::Violation>),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("target moments infeasible for binary variables at pairs {pairs:?}")]
    Infeasible { pairs: Vec<(usize, usize, f64)> },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
