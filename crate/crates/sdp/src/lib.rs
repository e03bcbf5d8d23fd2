//! Semidefinite programs in inequality form and a reference solver.
//!
//! A problem has decision vector `y ∈ ℝᴺ` and reads
//!
//! ```text
//! minimize    cᵀy
//! subject to  A y = b
//!             F_j(y) = F_j0 + Σ_i y_i F_ji ⪰ 0     for every block j
//! ```
//!
//! [`SdpProblem`] is the exchange format; it serializes to a sparse text
//! document (see [`format`]) so the same problem can be handed to an external
//! solver. [`BarrierSolver`] is the built-in backend.

mod barrier;
pub mod format;
mod problem;

pub use barrier::{BarrierOptions, BarrierSolver};
pub use problem::{BlockEntry, EqualityEntry, PsdBlock, SdpProblem};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("problem is infeasible (most violated block {block:?}, margin {margin:.3e})")]
    Infeasible { block: Option<usize>, margin: f64 },
    #[error("backend failure: {0}")]
    BackendFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Duality-gap target reached.
    Optimal,
    /// Strictly feasible point found, gap target not reached.
    Feasible,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Upper bound on the distance between `objective` and the optimum.
    pub gap: f64,
    /// Smallest eigenvalue of each block at `y`.
    pub block_min_eigs: Vec<f64>,
    pub iterations: usize,
}

/// Anything that can solve an [`SdpProblem`].
pub trait SdpBackend {
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution, SdpError>;
}
