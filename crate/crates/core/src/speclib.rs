//! Specification functions, the joint quantile/ES loss, its estimating
//! equations and the pseudo-R².
//!
//! For a row `(y, x)` and parameters `theta = (theta_q, theta_e)` the loss is
//!
//! ```text
//! rho = (1{y <= x'q} - alpha) G1(x'q) - 1{y <= x'q} G1(y)
//!     + G2(x'e) (x'e - x'q + (x'q - y) 1{y <= x'q} / alpha) - Gcal2(x'e) + a(y)
//! ```
//!
//! where `Gcal2' = G2`. The indicator uses the weak inequality `y <= x'q`
//! everywhere, including in the estimating equations.

use crate::error::{EsregError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A probability level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ProbabilityLevel(f64);

impl ProbabilityLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(EsregError::InvalidLevel(alpha))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ProbabilityLevel {
    type Error = EsregError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbabilityLevel> for f64 {
    fn from(p: ProbabilityLevel) -> f64 {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum G1Kind {
    /// `G1(z) = 0`
    Zero,
    /// `G1(z) = z`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum G2Kind {
    /// `Gcal2(z) = -1/z`, homogeneous of order -1.
    NegInverse,
    /// `Gcal2(z) = -log(-z)`, loss differences homogeneous of order 0.
    NegLog,
    /// `Gcal2(z) = -sqrt(-z)`, homogeneous of order 1/2.
    NegSqrt,
    /// `Gcal2(z) = log(1 + e^z)`; `G2` is the logistic CDF.
    LogisticLog,
    /// `Gcal2(z) = e^z`.
    Exp,
    /// `Gcal2 = 0`. Drops the ES part entirely, which leaves plain quantile
    /// regression when combined with [`G1Kind::Linear`]. Not a valid
    /// specification for ES estimation.
    Absent,
}

impl G2Kind {
    /// The five admissible choices, in the order used for reporting.
    pub const ALL: [G2Kind; 5] = [
        G2Kind::NegLog,
        G2Kind::NegSqrt,
        G2Kind::NegInverse,
        G2Kind::LogisticLog,
        G2Kind::Exp,
    ];

    pub fn requires_negative_es(self) -> bool {
        matches!(self, G2Kind::NegInverse | G2Kind::NegLog | G2Kind::NegSqrt)
    }

    /// Order `b` of positive homogeneity (with `G1 = 0`), if any.
    pub fn homogeneity_order(self) -> Option<f64> {
        match self {
            G2Kind::NegInverse => Some(-1.0),
            G2Kind::NegLog => Some(0.0),
            G2Kind::NegSqrt => Some(0.5),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            G2Kind::NegInverse => "neg-inverse",
            G2Kind::NegLog => "neg-log",
            G2Kind::NegSqrt => "neg-sqrt",
            G2Kind::LogisticLog => "logistic-log",
            G2Kind::Exp => "exp",
            G2Kind::Absent => "absent",
        }
    }
}

impl fmt::Display for G2Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for G2Kind {
    type Err = EsregError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg-inverse" => Ok(G2Kind::NegInverse),
            "neg-log" => Ok(G2Kind::NegLog),
            "neg-sqrt" => Ok(G2Kind::NegSqrt),
            "logistic-log" => Ok(G2Kind::LogisticLog),
            "exp" => Ok(G2Kind::Exp),
            other => Err(EsregError::InvalidInput(format!(
                "unknown specification family '{other}'"
            ))),
        }
    }
}

impl FromStr for G1Kind {
    type Err = EsregError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(G1Kind::Zero),
            "linear" => Ok(G1Kind::Linear),
            other => Err(EsregError::InvalidInput(format!("unknown G1 kind '{other}'"))),
        }
    }
}

/// The pair `(G1, Gcal2)` parameterizing the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpecificationFamily {
    pub g1: G1Kind,
    pub g2: G2Kind,
}

/// Values of the specification functions at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecValues {
    pub g1: f64,
    pub g1p: f64,
    pub g2: f64,
    pub g2p: f64,
    pub curly_g2: f64,
    /// Second derivative of `G2`.
    pub g2pp: f64,
}

impl SpecificationFamily {
    pub const fn new(g1: G1Kind, g2: G2Kind) -> Self {
        Self { g1, g2 }
    }

    /// `G1 = 0` with the given `Gcal2`.
    pub const fn with_g2(g2: G2Kind) -> Self {
        Self { g1: G1Kind::Zero, g2 }
    }

    /// Pure quantile regression: `G1(z) = z`, `G2 = 0`.
    pub const fn quantile_only() -> Self {
        Self { g1: G1Kind::Linear, g2: G2Kind::Absent }
    }

    #[inline]
    pub fn requires_negative_es(&self) -> bool {
        self.g2.requires_negative_es()
    }

    #[inline]
    pub fn g1_parts(&self, z: f64) -> (f64, f64) {
        match self.g1 {
            G1Kind::Zero => (0.0, 0.0),
            G1Kind::Linear => (z, 1.0),
        }
    }

    /// `(G2, G2', Gcal2)` at `z`, or `None` outside the domain.
    #[inline]
    pub fn g2_parts(&self, z: f64) -> Option<(f64, f64, f64)> {
        match self.g2 {
            G2Kind::NegInverse => {
                if z < 0.0 {
                    let inv = 1.0 / z;
                    Some((inv * inv, -2.0 * inv * inv * inv, -inv))
                } else {
                    None
                }
            }
            G2Kind::NegLog => {
                if z < 0.0 {
                    let inv = 1.0 / z;
                    Some((-inv, inv * inv, -(-z).ln()))
                } else {
                    None
                }
            }
            G2Kind::NegSqrt => {
                if z < 0.0 {
                    let r = (-z).sqrt();
                    Some((0.5 / r, 0.25 / (r * -z), -r))
                } else {
                    None
                }
            }
            G2Kind::LogisticLog => {
                let s = logistic(z);
                Some((s, s * (1.0 - s), softplus(z)))
            }
            G2Kind::Exp => {
                let e = z.exp();
                Some((e, e, e))
            }
            G2Kind::Absent => Some((0.0, 0.0, 0.0)),
        }
    }

    fn g2_second(&self, z: f64) -> f64 {
        match self.g2 {
            G2Kind::NegInverse => 6.0 / z.powi(4),
            G2Kind::NegLog => -2.0 / z.powi(3),
            G2Kind::NegSqrt => 0.375 / (-z).powf(2.5),
            G2Kind::LogisticLog => {
                let s = logistic(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            G2Kind::Exp => z.exp(),
            G2Kind::Absent => 0.0,
        }
    }

    /// Evaluate all specification functions at `z`.
    pub fn eval(&self, z: f64) -> Result<SpecValues> {
        eval_spec(*self, z)
    }
}

/// Evaluate `G1, G1', G2, G2', Gcal2` (and `G2''`) at `z`.
pub fn eval_spec(fam: SpecificationFamily, z: f64) -> Result<SpecValues> {
    let (g1, g1p) = fam.g1_parts(z);
    let (g2, g2p, curly_g2) = fam
        .g2_parts(z)
        .ok_or(EsregError::Domain { row: 0, value: z })?;
    Ok(SpecValues { g1, g1p, g2, g2p, curly_g2, g2pp: fam.g2_second(z) })
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Choice of the additive term `a(y)` in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AMode {
    /// `a(y) = 0`
    #[default]
    Zero,
    /// `a(y) = alpha G1(y) + Gcal2(y)`, which makes the loss non-negative.
    NonNegative,
}

/// Stacked regression parameters for the quantile and ES equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub theta_q: Vec<f64>,
    pub theta_e: Vec<f64>,
}

impl JointParams {
    pub fn new(theta_q: Vec<f64>, theta_e: Vec<f64>) -> Result<Self> {
        if theta_q.is_empty() || theta_q.len() != theta_e.len() {
            return Err(EsregError::Dimension(format!(
                "theta_q has length {}, theta_e has length {}",
                theta_q.len(),
                theta_e.len()
            )));
        }
        Ok(Self { theta_q, theta_e })
    }

    pub fn k(&self) -> usize {
        self.theta_q.len()
    }

    /// `(theta_q', theta_e')'` as a single vector of length `2k`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.theta_q.clone();
        v.extend_from_slice(&self.theta_e);
        v
    }

    pub fn from_stacked(v: &[f64]) -> Self {
        let k = v.len() / 2;
        Self { theta_q: v[..k].to_vec(), theta_e: v[k..].to_vec() }
    }

    /// Add `offset` to both intercepts (first coordinate).
    pub fn shift_intercepts(&self, offset: f64) -> Self {
        let mut out = self.clone();
        out.theta_q[0] += offset;
        out.theta_e[0] += offset;
        out
    }
}

/// Responses `y` and an `n x k` design matrix `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    y: Vec<f64>,
    x: DMatrix<f64>,
}

impl RegressionSample {
    /// Build a sample whose first design column is the intercept.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let sample = Self::with_design(y, x)?;
        if !sample.has_intercept() {
            return Err(EsregError::InvalidInput(
                "first design column must be all ones".into(),
            ));
        }
        Ok(sample)
    }

    /// Build a sample with an arbitrary full-rank design.
    pub fn with_design(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, k) = x.shape();
        if y.len() != n {
            return Err(EsregError::Dimension(format!(
                "y has {} rows, x has {n}",
                y.len()
            )));
        }
        if k == 0 || n <= k {
            return Err(EsregError::InvalidInput(format!(
                "need n > k >= 1, got n = {n}, k = {k}"
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(EsregError::InvalidInput("non-finite value in sample".into()));
        }
        let gram = x.transpose() * &x;
        if gram.cholesky().is_none() {
            return Err(EsregError::Singular("design matrix is not of full column rank"));
        }
        Ok(Self { y, x })
    }

    /// Intercept-only design.
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(y, DMatrix::from_element(n, 1, 1.0))
    }

    pub(crate) fn from_parts_unchecked(y: Vec<f64>, x: DMatrix<f64>) -> Self {
        Self { y, x }
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.x.column(0).iter().all(|&v| v == 1.0)
    }

    /// Same design with responses `y - offset`.
    pub fn translated(&self, offset: f64) -> Self {
        Self { y: self.y.iter().map(|v| v - offset).collect(), x: self.x.clone() }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Fitted values `x_i' beta` for every row.
    pub fn predict(&self, beta: &[f64]) -> Vec<f64> {
        linear_predictor(&self.x, beta)
    }
}

/// `X beta` for a column-major design.
pub(crate) fn linear_predictor(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut out = vec![0.0; n];
    for (j, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let col = x.column(j);
        for (o, &v) in out.iter_mut().zip(col.iter()) {
            *o += v * b;
        }
    }
    out
}

/// Loss for one observation given the two linear predictors.
#[inline]
pub(crate) fn loss_from_predictors(
    fam: &SpecificationFamily,
    alpha: f64,
    y: f64,
    xq: f64,
    xe: f64,
    a_mode: AMode,
) -> Option<f64> {
    let hit = y <= xq;
    let (g2, _, curly) = fam.g2_parts(xe)?;
    let mut loss = g2 * (xe - xq + if hit { (xq - y) / alpha } else { 0.0 }) - curly;
    if fam.g1 == G1Kind::Linear {
        let ind = if hit { 1.0 } else { 0.0 };
        loss += (ind - alpha) * xq - ind * y;
    }
    if a_mode == AMode::NonNegative {
        let (_, _, curly_y) = fam.g2_parts(y)?;
        loss += alpha * fam.g1_parts(y).0 + curly_y;
    }
    Some(loss)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_row(xrow: &[f64], theta: &JointParams) -> Result<()> {
    if xrow.len() != theta.k() {
        return Err(EsregError::Dimension(format!(
            "row has length {}, parameters have k = {}",
            xrow.len(),
            theta.k()
        )));
    }
    Ok(())
}

/// The joint loss for a single observation.
pub fn joint_loss(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    y: f64,
    xrow: &[f64],
    theta: &JointParams,
    a_mode: AMode,
) -> Result<f64> {
    check_row(xrow, theta)?;
    let xq = dot(xrow, &theta.theta_q);
    let xe = dot(xrow, &theta.theta_e);
    if a_mode == AMode::NonNegative && fam.g2_parts(y).is_none() {
        return Err(EsregError::Domain { row: 0, value: y });
    }
    loss_from_predictors(&fam, alpha.value(), y, xq, xe, a_mode)
        .ok_or(EsregError::Domain { row: 0, value: xe })
}

/// Mean of [`joint_loss`] over the sample.
pub fn average_loss(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    theta: &JointParams,
    a_mode: AMode,
) -> Result<f64> {
    if theta.k() != sample.k() {
        return Err(EsregError::Dimension(format!(
            "sample has k = {}, parameters have k = {}",
            sample.k(),
            theta.k()
        )));
    }
    let xq = sample.predict(&theta.theta_q);
    let xe = sample.predict(&theta.theta_e);
    let mut total = 0.0;
    for (i, ((&y, &q), &e)) in sample.y().iter().zip(&xq).zip(&xe).enumerate() {
        match loss_from_predictors(&fam, alpha.value(), y, q, e, a_mode) {
            Some(l) => total += l,
            None => {
                let value = if fam.g2_parts(e).is_none() { e } else { y };
                return Err(EsregError::Domain { row: i, value });
            }
        }
    }
    Ok(total / sample.n() as f64)
}

/// Average loss for the optimizers: `+inf` whenever any row leaves the domain.
pub(crate) fn average_loss_or_inf(
    fam: &SpecificationFamily,
    alpha: f64,
    y: &[f64],
    xq: &[f64],
    xe: &[f64],
) -> f64 {
    let mut total = 0.0;
    for ((&yi, &q), &e) in y.iter().zip(xq).zip(xe) {
        match loss_from_predictors(fam, alpha, yi, q, e, AMode::Zero) {
            Some(l) => total += l,
            None => return f64::INFINITY,
        }
    }
    total / y.len() as f64
}

/// Per-observation estimating equations `psi = (psi_1, psi_2)` of length `2k`.
pub fn estimating_equations(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    y: f64,
    xrow: &[f64],
    theta: &JointParams,
) -> Result<Vec<f64>> {
    check_row(xrow, theta)?;
    let xq = dot(xrow, &theta.theta_q);
    let xe = dot(xrow, &theta.theta_e);
    let (w1, w2) = psi_weights(&fam, alpha.value(), y, xq, xe)
        .ok_or(EsregError::Domain { row: 0, value: xe })?;
    let mut out = Vec::with_capacity(2 * xrow.len());
    out.extend(xrow.iter().map(|x| x * w1));
    out.extend(xrow.iter().map(|x| x * w2));
    Ok(out)
}

/// Scalar multipliers of `x` in `psi_1` and `psi_2`.
#[inline]
pub(crate) fn psi_weights(
    fam: &SpecificationFamily,
    alpha: f64,
    y: f64,
    xq: f64,
    xe: f64,
) -> Option<(f64, f64)> {
    let hit = y <= xq;
    let ind = if hit { 1.0 } else { 0.0 };
    let (g2, g2p, _) = fam.g2_parts(xe)?;
    let (_, g1p) = fam.g1_parts(xq);
    let w1 = (ind - alpha) / alpha * (alpha * g1p + g2);
    let w2 = g2p * (xe - xq + if hit { (xq - y) / alpha } else { 0.0 });
    Some((w1, w2))
}

/// Sample mean of the estimating equations.
pub fn average_psi(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    theta: &JointParams,
) -> Result<Vec<f64>> {
    let k = sample.k();
    let xq = sample.predict(&theta.theta_q);
    let xe = sample.predict(&theta.theta_e);
    let mut out = vec![0.0; 2 * k];
    for i in 0..sample.n() {
        let (w1, w2) = psi_weights(&fam, alpha.value(), sample.y()[i], xq[i], xe[i])
            .ok_or(EsregError::Domain { row: i, value: xe[i] })?;
        for j in 0..k {
            let xij = sample.x()[(i, j)];
            out[j] += w1 * xij;
            out[k + j] += w2 * xij;
        }
    }
    let n = sample.n() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Pseudo-R² `1 - L(theta_full) / L(theta_intercept)` with non-negative losses.
///
/// `theta_intercept` may have length 1 (intercept only) or `k`.
pub fn pseudo_r2(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    theta_full: &JointParams,
    theta_intercept: &JointParams,
) -> Result<f64> {
    let full = average_loss(fam, alpha, sample, theta_full, AMode::NonNegative)?;
    let restricted = if theta_intercept.k() == 1 && sample.k() > 1 {
        let ones = RegressionSample::from_parts_unchecked(
            sample.y().to_vec(),
            DMatrix::from_element(sample.n(), 1, 1.0),
        );
        average_loss(fam, alpha, &ones, theta_intercept, AMode::NonNegative)?
    } else {
        average_loss(fam, alpha, sample, theta_intercept, AMode::NonNegative)?
    };
    if restricted == 0.0 {
        return Err(EsregError::ZeroBaselineLoss);
    }
    Ok(1.0 - full / restricted)
}
