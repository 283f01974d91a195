use thiserror::Error;

/// Errors produced by the estimation, covariance and evaluation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EsregError {
    #[error("probability level {0} is outside the open interval (0, 1)")]
    InvalidLevel(f64),

    #[error("specification function evaluated outside its domain at row {row}: x'theta_e = {value} must be negative")]
    Domain { row: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("Z-estimator diverged: |theta_e| = {norm} exceeds bound {bound}")]
    Divergence { norm: f64, bound: f64 },

    #[error("degenerate quantile spacing: the difference quotient is zero")]
    DegenerateSpacing,

    #[error("need at least 2 strictly negative quantile residuals, found {0}")]
    InsufficientTail(usize),

    #[error("degenerate kernel density estimate: standardized residuals have zero spread")]
    DegenerateKde,

    #[error("numerical integration failed: {0}")]
    Quadrature(String),

    #[error("{failed} of {total} bootstrap replicates failed")]
    Bootstrap { failed: usize, total: usize },

    #[error("forecast tracks are not aligned: {0}")]
    Misaligned(String),

    #[error("pseudo-R2 undefined: intercept-model loss is zero")]
    ZeroBaselineLoss,
}

pub type Result<T> = std::result::Result<T, EsregError>;
