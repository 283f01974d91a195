//! Joint regression of the conditional quantile (VaR) and Expected Shortfall.
//!
//! The estimator minimizes a strictly consistent joint loss indexed by a
//! pair of specification functions; see [`speclib`]. Fitting lives in
//! [`fit`], asymptotic and bootstrap covariances in [`covariance`], the
//! simulation designs in [`simulate`] and forecast evaluation in
//! [`evaluate`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod dist;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod nelder_mead;
pub mod quadrature;
pub mod quantreg;
pub mod simulate;
pub mod speclib;

pub use covariance::{sandwich, CovOptions, CovarianceEstimate, DensityMethod, TruncVarMethod};
pub use error::{EsregError, Result};
pub use fit::{m_fit, z_fit, Estimator, FitOptions, FitResult};
pub use speclib::{
    G1Kind, G2Kind, JointParams, ProbabilityLevel, RegressionSample, SpecificationFamily,
};
