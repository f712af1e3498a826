use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fixed-point iteration did not converge in step {step} after {iterations} iterations (residual {residual:.3e}); time step too large?")]
    FixedPointNotConverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite values encountered in step {step}")]
    NonFinite { step: usize },

    #[error("ground state did not converge after {iterations} iterations (residual {residual:.3e})")]
    GroundStateNotConverged { iterations: usize, residual: f64 },

    #[error("singular linear system at row {row}")]
    SingularSystem { row: usize },

    #[error("missing desired energy for the energy cost functional")]
    MissingDesiredEnergy,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}
