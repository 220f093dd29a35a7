use thiserror::Error;

/// Errors raised across the planning and smoothing pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("polytope {0} is empty")]
    EmptyPolytope(String),

    #[error("target region is not contained in the domain: {0}")]
    TargetOutsideDomain(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("matrix is singular or not positive definite: {0}")]
    SingularMatrix(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no admissible path found: {0}")]
    NoSolution(String),

    #[error("multiplier initialization infeasible at transition k={k}, obstacle j={j}")]
    InitInfeasible { k: usize, j: usize },

    #[error("convex subproblem infeasible at CCP iteration {0}")]
    SubproblemInfeasible(usize),

    #[error("conic solver stalled at CCP iteration {0}")]
    SolverStalled(usize),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
