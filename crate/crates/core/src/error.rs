use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value from {0}")]
    NonFiniteValue(&'static str),
    #[error("mark {0} is not an atom of the mark measure")]
    UnknownMark(f64),
    #[error("coefficient field does not provide {0}")]
    MissingDerivative(&'static str),
    #[error("I + grad H is singular (|det| = {det:e})")]
    SingularJumpJacobian { det: f64 },
    #[error("Jacobian is singular (|det| = {det:e})")]
    SingularJacobian { det: f64 },
    #[error("invalid time interval [{s}, {t}]")]
    InvalidInterval { s: f64, t: f64 },
    #[error("non-finite state at time {time}")]
    NonFiniteState { time: f64 },
    #[error("no convergence in {stage} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("field has a jump part; this operation needs H = 0")]
    JumpFieldRejected,
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("gradients were requested but not stored")]
    MissingGradient,
    #[error("point left the solution box at time {time}")]
    OutOfGrid { time: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scheme not supported: {0}")]
    SchemeUnsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;
