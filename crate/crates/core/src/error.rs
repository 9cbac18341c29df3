use thiserror::Error;

use crate::measures::ValidationFailure;

pub type Result<T> = std::result::Result<T, GvpError>;

#[derive(Debug, Error)]
pub enum GvpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("duplicate points at indices {0} and {1}")]
    DuplicatePoints(usize, usize),

    #[error("ill-conditioned discretization: ridge escalation exceeded eps = {eps:e}")]
    IllConditioned { eps: f64 },

    #[error("condenser validation failed: {0}")]
    Validation(#[from] ValidationFailure),

    #[error("atom at {0:?} has no index in the energy context")]
    UnindexedAtom(Vec<f64>),

    #[error("negative radicand {0:e} in distance computation")]
    NegativeRadicand(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("measure has atoms on the target node set")]
    AtomsOnTarget,

    #[error("maximum-principle constant h is unknown for alpha = {0} > 2; supply it explicitly")]
    MissingMaxPrincipleConstant(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("plate index {0} out of range")]
    PlateIndex(usize),
}
