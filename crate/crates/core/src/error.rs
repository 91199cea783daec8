use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e}, tolerance {tolerance:.3e})")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("block {n} is not defined by family `{family}`")]
    MissingBlock { family: String, n: usize },

    #[error("shift is numerically an eigenvalue: pivot block {block} has condition number {condition:.3e}")]
    SingularShift { block: usize, condition: f64 },

    #[error(
        "entries do not commute: {first} and {second} (relative commutator {relative:.3e})"
    )]
    CommutationViolation {
        first: String,
        second: String,
        relative: f64,
    },

    #[error("spectral parameter lies within {distance:.3e} of the truncation spectrum (guard {guard:.0e})")]
    NearSpectrum { distance: f64, guard: f64 },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("no eigenvalue of the truncation lies below b = {b}")]
    EmptySpectrum { b: f64 },

    #[error("family file: {0}")]
    FamilyFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
