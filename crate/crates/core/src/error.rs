use thiserror::Error;

/// Errors raised by group, algebra and propagation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not in the span of the algebra basis (residual {residual:.3e})")]
    NotInAlgebra { residual: f64 },

    #[error("matrix is not a group element: {0}")]
    NotInGroup(String),

    #[error("logarithm outside the principal branch (rotation angle {angle:.12})")]
    Branch { angle: f64 },

    #[error("matrix logarithm failed: {0}")]
    LogFailure(String),

    #[error("dexp is singular (reciprocal condition number {rcond:.3e})")]
    Singular { rcond: f64 },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("classification mismatch: {0}")]
    Classification(String),

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LieError>;
