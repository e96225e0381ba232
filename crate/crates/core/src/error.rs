use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e} below -{tol:e}")]
    NotPositiveSemidefinite { min_eig: f64, tol: f64 },

    #[error("non-finite entry in input")]
    NonFiniteInput,

    #[error("map evaluation produced a non-finite value")]
    NonFiniteEvaluation,

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("beta must be non-negative for {kind}, got {beta}")]
    NegativeBeta { kind: &'static str, beta: f64 },

    #[error("beta {beta} out of range for {kind}: requires beta >= {min}")]
    BetaOutOfRange { kind: &'static str, beta: f64, min: f64 },

    #[error("alpha must lie in (0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("map is not quadratic")]
    NotQuadratic,

    #[error("matrix is not orthogonal (|AA^T - I|_F = {0:e})")]
    NotOrthogonal(f64),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("degenerate case: {0}")]
    DegenerateCase(&'static str),

    #[error("geometric mean requires strictly positive entries, found {0}")]
    NonPositiveEntry(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("filter step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
