//! Univariate distribution helpers: standard normal and unit-variance
//! Student-t tail functionals (quantile, tail mean, truncated variance).

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const T5_DF: f64 = 5.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, refined by one Newton step on the CDF.
pub fn norm_quantile(p: f64) -> f64 {
    let x = Normal::standard().inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    let d = norm_pdf(x);
    if d > 0.0 {
        x - (norm_cdf(x) - p) / d
    } else {
        x
    }
}

/// Lower-tail mean `E[Z | Z <= z_p]` of the standard normal.
pub fn norm_tail_mean(p: f64) -> f64 {
    -norm_pdf(norm_quantile(p)) / p
}

/// `Var(Z | Z <= c)` for a standard normal `Z`.
pub fn norm_truncated_variance(c: f64) -> f64 {
    let c = c.max(-37.0);
    let lambda = norm_pdf(c) / norm_cdf(c);
    (1.0 - c * lambda - lambda * lambda).max(0.0)
}

/// Innovation law with zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Innovation {
    Normal,
    /// Student-t with 5 degrees of freedom, rescaled to unit variance.
    StudentT5,
}

impl Innovation {
    fn t5() -> StudentsT {
        StudentsT::new(0.0, 1.0, T5_DF).expect("valid t parameters")
    }

    /// Scale factor `sqrt(nu / (nu - 2))` mapping a raw t5 draw to unit variance.
    pub fn t5_scale() -> f64 {
        (T5_DF / (T5_DF - 2.0)).sqrt()
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            Innovation::Normal => norm_pdf(x),
            Innovation::StudentT5 => {
                let s = Self::t5_scale();
                s * Self::t5().pdf(x * s)
            }
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Innovation::Normal => norm_cdf(x),
            Innovation::StudentT5 => Self::t5().cdf(x * Self::t5_scale()),
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            Innovation::Normal => norm_quantile(p),
            Innovation::StudentT5 => Self::t5().inverse_cdf(p) / Self::t5_scale(),
        }
    }

    /// Expected Shortfall (lower tail mean) at level `p`.
    pub fn expected_shortfall(self, p: f64) -> f64 {
        match self {
            Innovation::Normal => norm_tail_mean(p),
            Innovation::StudentT5 => {
                let c = Self::t5().inverse_cdf(p);
                t_partial_first_moment(c, T5_DF) / p / Self::t5_scale()
            }
        }
    }

    /// `Var(v | v <= c)`.
    pub fn truncated_variance(self, c: f64) -> f64 {
        match self {
            Innovation::Normal => norm_truncated_variance(c),
            Innovation::StudentT5 => {
                let s = Self::t5_scale();
                let t = Self::t5();
                let ct = c * s;
                let mass = t.cdf(ct);
                let m1 = t_partial_first_moment(ct, T5_DF) / mass;
                let m2 = t_partial_second_moment(ct, T5_DF, &t) / mass;
                ((m2 - m1 * m1) / (s * s)).max(0.0)
            }
        }
    }
}

/// `E[T 1{T <= c}]` for a standard Student-t with `nu > 1` degrees of freedom.
fn t_partial_first_moment(c: f64, nu: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, nu).expect("valid t parameters");
    -(nu + c * c) / (nu - 1.0) * t.pdf(c)
}

/// `E[T^2 1{T <= c}]` for `nu > 2`, obtained by integrating the first partial
/// moment by parts.
fn t_partial_second_moment(c: f64, nu: f64, t: &StudentsT) -> f64 {
    let g = t_partial_first_moment(c, nu);
    ((nu - 1.0) * c * g + nu * t.cdf(c)) / (nu - 2.0)
}
