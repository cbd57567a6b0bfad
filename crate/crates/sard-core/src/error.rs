use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SardError {
    #[error("locations {0} and {1} coincide")]
    DuplicateLocation(usize, usize),
    #[error("area of location {0} is not strictly positive ({1})")]
    NonpositiveArea(usize, f64),
    #[error("location {0} lies outside the torus [0,{1})x[0,{2})")]
    CoordinateOutOfRange(usize, f64, f64),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("need at least {needed} locations, got {got}")]
    TooFewLocations { needed: usize, got: usize },
    #[error("star at location {location} is singular (condition number {cond:.3e})")]
    SingularStar { location: usize, cond: f64 },
    #[error("distance ratio {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("non-finite value in field at location {0}")]
    NonFiniteField(usize),
    #[error("integration became unstable at t = {t}: {reason}")]
    StabilityViolation { t: f64, reason: String },
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("phi tilde is zero; aggregate back-solve undefined")]
    ZeroPhiTilde,
    #[error("aggregate log argument is not positive ({0})")]
    DegenerateAggregate(f64),
    #[error("lambda {lambda} outside admissible interval ({lo}, {hi})")]
    LambdaOutOfRange { lambda: f64, lo: f64, hi: f64 },
    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("weight band is empty")]
    EmptyBand,
    #[error("field has zero variance")]
    ZeroVariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, SardError>;

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(SardError::DimensionMismatch { what, got, expected });
    }
    Ok(())
}
