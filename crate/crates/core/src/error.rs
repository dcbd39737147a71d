use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition kernel row {row} is invalid: {reason}")]
    InvalidKernel { row: usize, reason: String },

    #[error("chain is reducible: state {unreachable} is not mutually reachable from state 0")]
    ReducibleChain { unreachable: usize },

    #[error("linear system is singular (pivot {pivot:e} at column {column})")]
    SingularSystem { column: usize, pivot: f64 },

    #[error("input is not centered under the stationary distribution: column {column} has mean {mean:e}")]
    NonCenteredInput { column: usize, mean: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("inner solver failed: {0}")]
    SolverDiverged(String),

    #[error("property `{property}` violated (slack {slack:e}) at witness {witness:?}")]
    PropertyViolated {
        property: String,
        slack: f64,
        witness: Vec<f64>,
    },

    #[error("iterate became non-finite or exceeded 1e12 at step {step}")]
    NonFiniteIterate { step: usize },

    #[error("replication with seed {seed} failed: {source}")]
    Replication {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least {needed} points in the fit window, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("value {value:e} at index {index} is not strictly positive")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("fixed-point iteration is not contracting (observed ratio {ratio})")]
    NotContracting { ratio: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("reference state {reference} is unreachable under some policy")]
    Unreachable { reference: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
