//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// An edge references a node outside `1..=n`, or is a self-loop.
    InvalidEdge(String),
    /// The communication graph does not connect all players.
    DisconnectedGraph,
    /// An iterative numerical routine failed to converge or produced garbage.
    NumericalFailure(String),
    DimensionMismatch { expected: usize, got: usize },
    /// Sampled strong-convexity or strong-monotonicity modulus was not positive.
    NonPositiveModulus(String),
    /// A step-size upper bound came out non-positive.
    InfeasibleSteps(String),
    /// An iterate picked up a NaN or infinity.
    NonFiniteState(String),
    /// An aggregation estimate left the configured bound.
    YBoundViolated { player: usize, norm: f64, bound: f64 },
    MaxIterExceeded { iters: usize, residual: f64 },
    SingularHessian,
    EmptyTrace,
    InvalidParams(String),
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidEdge(s) => write!(f, "invalid edge: {s}"),
            Error::DisconnectedGraph => write!(f, "communication graph is not connected"),
            Error::NumericalFailure(s) => write!(f, "numerical failure: {s}"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::NonPositiveModulus(s) => write!(f, "non-positive modulus: {s}"),
            Error::InfeasibleSteps(s) => write!(f, "infeasible step sizes: {s}"),
            Error::NonFiniteState(s) => write!(f, "non-finite state: {s}"),
            Error::YBoundViolated { player, norm, bound } => write!(
                f,
                "aggregation estimate of player {player} left its bound: |y| = {norm} > {bound}"
            ),
            Error::MaxIterExceeded { iters, residual } => {
                write!(f, "no convergence after {iters} iterations (residual {residual:e})")
            }
            Error::SingularHessian => write!(f, "summed inner Hessian is singular"),
            Error::EmptyTrace => write!(f, "trace has no usable records"),
            Error::InvalidParams(s) => write!(f, "invalid parameters: {s}"),
            Error::Config(s) => write!(f, "config error: {s}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
