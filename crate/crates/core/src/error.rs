use thiserror::Error;

use crate::solver::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology is not connected")]
    DisconnectedGraph,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("matrix is not doubly stochastic (max row/column deviation {deviation:e})")]
    NotStochastic { deviation: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("social cost is not strongly convex (smallest Hessian eigenvalue {min_eig:e})")]
    NotStronglyConvex { min_eig: f64 },
    #[error(
        "gradient mismatch for player {player} in {callback}: relative deviation {deviation:e}"
    )]
    GradientMismatch {
        player: usize,
        callback: &'static str,
        deviation: f64,
    },
    #[error("gradient check needs scalar cost evaluators")]
    MissingEvaluators,
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("non-finite value produced at iteration {k}")]
    NonFiniteValue {
        k: usize,
        /// Rows recorded before the failure, when produced by a full run.
        partial: Option<Box<Trace>>,
    },
    #[error("spectral gap is degenerate (rho = {rho})")]
    DegenerateSpectralGap { rho: f64 },
    #[error("fixed-point iteration did not converge within {max_iters} iterations (residual {residual:e})")]
    NoConvergence { max_iters: usize, residual: f64 },
    #[error("KKT system is singular: {0}")]
    SingularKkt(String),
    #[error("oracle point was computed for eta = {found}, expected eta_(k-1) = {expected}")]
    IterationMismatch { expected: f64, found: f64 },
    #[error("recursion violated at k = {k}, component {component} (margin {margin:e})")]
    RecursionViolated {
        k: usize,
        component: usize,
        margin: f64,
    },
    #[error("contraction violated at k = {k}: {what} (margin {margin:e})")]
    ContractionViolated {
        k: usize,
        what: &'static str,
        margin: f64,
    },
}
