//! Nonlinear programming solver, KKT diagnostics and the analytic planners
//! used as oracles.

pub mod envelope;
pub mod ipm;
pub mod kkt;
pub mod oracles;

pub use ipm::{solve, solve_from, IterRecord, NlpResult, SolveOptions, SolveStatus};
pub use kkt::{kkt_residual, KktResidual};
