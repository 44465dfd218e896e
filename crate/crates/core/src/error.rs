//! Shared error type and the process exit codes the CLI maps it to.

use thiserror::Error;

/// Everything that can go wrong across the crate.
///
/// Variants are grouped by how a driver should react: configuration and
/// domain problems are caller mistakes, invariant and assumption failures
/// mean the computed state left the region the scheme guarantees, and
/// `NoConvergence` is a linear-solver budget failure.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument to a numerical routine (bad sizes, negative
    /// evaluation points, malformed sample tables).
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario description failed validation before the run started.
    #[error("config error: {0}")]
    Config(String),

    /// A computed state violated a structural guarantee of the scheme
    /// (mass conservation, positivity, the sup bound on the signal).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// The motility was evaluated outside the positivity assumption while
    /// the run was configured to enforce it.
    #[error("assumption violation: {0}")]
    Assumption(String),

    /// Right-hand side with nonzero mean handed to a pure Neumann solve.
    #[error("incompatible right-hand side: |mean| = {mean:.3e} exceeds {limit:.3e}")]
    IncompatibleRhs { mean: f64, limit: f64 },

    /// A linear solve ran out of its iteration budget.
    #[error("linear solve stalled after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Diagnostics asked for a time range the stored history does not cover.
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for drivers: 2 = configuration problem,
    /// 3 = invariant or assumption violation, 4 = solver failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Config(_)
            | Error::InsufficientHistory(_)
            | Error::Io(_) => 2,
            Error::Invariant(_) | Error::Assumption(_) => 3,
            Error::NoConvergence { .. } => 4,
            Error::IncompatibleRhs { .. } => 2,
        }
    }
}
