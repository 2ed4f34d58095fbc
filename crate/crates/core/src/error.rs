use thiserror::Error;

use crate::assimilation::PosteriorResult;
use crate::oed::OedResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("time {time} does not lie on the integration lattice")]
    TimeOffLattice { time: f64 },

    #[error(
        "inverse problem has no {0} registered; register one before solving \
         (see InverseProblem::register_{0})"
    )]
    MissingComponent(&'static str),

    #[error("operation requires a linear model with a dense operator representation")]
    NotLinear,

    #[error("design is not binary: weight {index} is {value}")]
    NonBinaryDesign { index: usize, value: f64 },

    #[error("{0} is not differentiable")]
    NotDifferentiable(&'static str),

    #[error("the relaxed solver needs a differentiable penalty; `{0}` is not")]
    NonDifferentiablePenalty(&'static str),

    #[error("policy bound epsilon must lie in (0, 0.5), got {0}")]
    InvalidBounds(f64),

    #[error("brute force over {0} sensors exceeds the 2^22 design guard")]
    TooManyDesigns(usize),

    #[error("MAP estimation did not converge after {} iterations", .0.objective_trace.len().saturating_sub(1))]
    NonConvergence(Box<PosteriorResult>),

    #[error("OED solver did not converge after {} iterations", .0.trajectory.len().saturating_sub(1))]
    OedNonConvergence(Box<OedResult>),
}

impl Error {
    pub(crate) fn mismatch(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
