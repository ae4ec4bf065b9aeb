//! Block semidefinite programming for sum-of-squares certificates.
//!
//! [`SdpInstance`] describes an equality-form SDP over several PSD blocks plus
//! free scalar variables. [`solve`] runs an infeasible primal-dual
//! interior-point method (HKM search direction, Mehrotra predictor-corrector)
//! and [`sdpa`] reads and writes the SDPA sparse interchange format so any
//! external solver can be substituted.

mod instance;
mod ipm;
mod polish;
pub mod sdpa;

use thiserror::Error;

pub use instance::{Entry, LinearForm, Row, SdpInstance};
pub use ipm::{solve, Solution, SolverOptions, Status};
pub use polish::{polish, row_residual};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed instance: {0}")]
    Malformed(String),
    #[error("SDPA parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
