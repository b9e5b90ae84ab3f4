use thiserror::Error;

/// Errors raised by the simulation engine.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    #[error("matrix is not positive semidefinite: pivot {pivot} below tolerance {tol}")]
    NotPsd { pivot: f64, tol: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("negative time step: {0}")]
    NegativeTime(f64),

    #[error("symmetric eigensolver failed to converge")]
    EigenFailure,

    #[error("argument outside the Laplace-transform convergence domain")]
    OutsideDomain,

    #[error("singular linear system in {0}")]
    SingularSolve(&'static str),

    #[error("invalid chi-square degree: {0}")]
    InvalidDegree(f64),

    #[error("alpha = {alpha} below the existence bound d - 1 = {bound}")]
    InvalidAlpha { alpha: f64, bound: f64 },

    #[error("residual u11 = {0} significantly negative; initial matrix is not PSD")]
    ResidualNegative(f64),

    #[error("unsupported parameters: {0}")]
    UnsupportedParams(String),

    #[error("scheme requires degree at least d: delta_min = {delta_min} < d = {d}")]
    NeedsDegreeAtLeastD { delta_min: f64, d: usize },

    #[error("incompatible dimensions: {0} vs {1}")]
    IncompatibleDims(usize, usize),

    #[error("existence condition violated: alpha_bar - (d-1) a^T a is not PSD (min eigenvalue {0})")]
    ExistenceViolated(f64),

    #[error("fewer than 3 grid points have error above the Monte-Carlo noise floor")]
    InsufficientSignal,
}

pub type Result<T> = std::result::Result<T, SimError>;
