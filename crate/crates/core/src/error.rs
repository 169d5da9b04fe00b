use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("too many users on one receiver band: {count} > {cap}")]
    SubsetCap { count: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("option conflict: {0}")]
    Options(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("bisection did not converge: {0}")]
    NoConvergence(String),

    /// Closed-loop failure; `snapshot` is the state as JSON.
    #[error("simulation failed at t = {time} s: {message}")]
    Simulation { time: f64, message: String, snapshot: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
