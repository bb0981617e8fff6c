use thiserror::Error;

use crate::integrators::FlowStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("time grid needs at least 2 intervals on [0,1], got {0} nodes")]
    GridTooCoarse(usize),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("Newton iteration did not converge at t = {t}")]
    NewtonFailure { t: f64 },

    #[error("system is not separable, Stormer-Verlet requires H = T(p) + V(u)")]
    NotSeparable,

    #[error("flow did not complete: {0:?}")]
    FlowIncomplete(FlowStatus),

    #[error("requested branch {requested} but only {available} solution(s) exist")]
    NoSuchBranch { requested: usize, available: usize },

    #[error("branch lost during continuation (momentum jump {jump:.3e})")]
    BranchLost { jump: f64 },

    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),

    #[error("paths have mismatched grid lengths: expected {expected}, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("state is off the constraint submanifold (|p - Sigma(e)| = {residual:.3e})")]
    OffConstraint { residual: f64 },

    #[error("constraints are not stable at t = {t} (tangency residual {residual:.3e})")]
    Unstable { t: f64, residual: f64 },
}
