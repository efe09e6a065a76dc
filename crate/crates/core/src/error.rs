use thiserror::Error;

/// Errors produced by the solvers and combinatorial routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Newton iteration did not converge after {iterations} steps (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("bordered linear solve failed: {0}")]
    SingularJacobian(String),

    #[error("degenerate fixed point data: {0}")]
    Degenerate(String),

    #[error("fixed point is not hyperbolic: eigenvalue modulus {modulus} within {margin} of 1")]
    NotHyperbolic { modulus: f64, margin: f64 },

    #[error("no manifold intersection found within the arclength budget")]
    NoIntersectionFound,

    #[error("extended Jacobian kernel has dimension > 1")]
    RankDeficient,

    #[error("continuation step failed: corrector did not converge")]
    StepFailed,

    #[error("continuation step size underflow (h < {0:.3e})")]
    MinStepReached(f64),

    #[error("fold bracket has no tangent sign change")]
    NoSignChange,

    #[error("augmented fold system is singular or did not converge: {0}")]
    AugmentedSingular(String),

    #[error("kernel is not simple: singular values ({smallest:.3e}, {second:.3e}) violate the gap condition")]
    KernelNotSimple { smallest: f64, second: f64 },

    #[error("not enough branch points near the fold: found {found}, need {needed}")]
    InsufficientPoints { found: usize, needed: usize },

    #[error("hump gap {gap} is below the minimum {min}")]
    GapTooSmall { gap: i64, min: i64 },

    #[error("orbit matches no catalog entry with a 2x separation margin (best {best:.3e}, runner-up {runner_up:.3e})")]
    AmbiguousMatch { best: f64, runner_up: f64 },

    #[error("enumeration budget exceeded")]
    BudgetExceeded,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
