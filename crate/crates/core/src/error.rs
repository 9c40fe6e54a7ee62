use thiserror::Error;

/// Errors raised for malformed inputs. A violated constraint is never an
/// error; it shows up as a positive residual.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("shape matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("shape matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("vertex {vertex} violates face {face} by {excess:e}")]
    RepresentationMismatch {
        vertex: usize,
        face: usize,
        excess: f64,
    },
    #[error("polytope in dimension {dim} needs at least {needed} faces, got {found}")]
    TooFewFaces {
        dim: usize,
        needed: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("hyperplane normal norm {norm:e} is below the guard {eps:e}")]
    NormTooSmall { norm: f64, eps: f64 },
    #[error("rotation matrix is not a proper rotation: {0}")]
    InvalidRotation(String),
    #[error("tan singularity: steering angle {0} rad is at +-pi/2")]
    SteeringSingularity(f64),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not positive semidefinite (pivot {pivot} = {value:e})")]
    NotPositiveSemidefinite { pivot: usize, value: f64 },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
