//! Sandwich covariance `Lambda^{-1} C Lambda^{-1} / n` of the joint estimator
//! with plug-in nuisance estimates, and the nonparametric bootstrap.
//!
//! Nuisance quantities are the conditional density of `y` at the fitted
//! quantile (`iid` difference quotient or per-row `nid`) and the conditional
//! variance of the quantile residual below zero (`ind`, scale model with
//! normal errors, or scale model with a kernel density for the errors).

use crate::dist::{norm_cdf, norm_pdf, norm_quantile, norm_truncated_variance, Innovation};
use crate::error::{EsregError, Result};
use crate::fit::{m_fit, quantile_fit, FitOptions, FitResult};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::quadrature::{adaptive_simpson, integrate_lower_tail};
use crate::quantreg::ols;
use crate::speclib::{
    linear_predictor, G1Kind, G2Kind, JointParams, ProbabilityLevel, RegressionSample,
    SpecificationFamily,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DensityMethod {
    #[default]
    Iid,
    Nid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TruncVarMethod {
    #[default]
    Ind,
    SclN,
    SclSp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovOptions {
    pub density: DensityMethod,
    pub truncvar: TruncVarMethod,
    /// Number of bootstrap replicates; 0 disables the bootstrap.
    pub bootstrap_reps: usize,
    pub bandwidth_eta: f64,
    pub rng_seed: u64,
}

impl Default for CovOptions {
    fn default() -> Self {
        Self {
            density: DensityMethod::Iid,
            truncvar: TruncVarMethod::Ind,
            bootstrap_reps: 0,
            bandwidth_eta: 0.05,
            rng_seed: 0,
        }
    }
}

impl CovOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_eta > 0.0 && self.bandwidth_eta < 1.0) {
            return Err(EsregError::InvalidInput(format!(
                "bandwidth_eta must be in (0, 1), got {}",
                self.bandwidth_eta
            )));
        }
        Ok(())
    }
}

/// A nuisance estimate shared by all rows or given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NuisanceValues {
    Scalar(f64),
    PerRow(Vec<f64>),
    /// Not used by the estimator (bootstrap).
    None,
}

impl NuisanceValues {
    fn at(&self, i: usize) -> f64 {
        match self {
            NuisanceValues::Scalar(v) => *v,
            NuisanceValues::PerRow(v) => v[i],
            NuisanceValues::None => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    /// Covariance of the stacked estimate `(theta_q, theta_e)`.
    pub matrix: DMatrix<f64>,
    pub method: CovOptions,
    pub density_values: NuisanceValues,
    pub truncvar_values: NuisanceValues,
}

impl CovarianceEstimate {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Hall-Sheather bandwidth for the sparsity estimate at level `alpha`.
pub fn hall_sheather_bandwidth(alpha: f64, n: usize, eta: f64) -> f64 {
    let z = norm_quantile(alpha);
    let za = norm_quantile(1.0 - eta / 2.0);
    let phi = norm_pdf(z);
    let h = (n.max(2) as f64).powf(-1.0 / 3.0)
        * za.powf(2.0 / 3.0)
        * (1.5 * phi * phi / (2.0 * z * z + 1.0)).powf(1.0 / 3.0);
    h.min(alpha.min(1.0 - alpha) * (1.0 - 1e-6))
}

/// Interpolated empirical quantile (linear between order statistics).
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Difference-quotient density of the quantile residuals at their
/// `alpha`-quantile, `2h / (Q(alpha + h) - Q(alpha - h))`.
pub fn density_iid(quantile_residuals: &[f64], alpha: f64, h: f64) -> Result<f64> {
    if quantile_residuals.len() < 2 {
        return Err(EsregError::InvalidInput("need at least 2 residuals".into()));
    }
    let mut s = quantile_residuals.to_vec();
    s.sort_by(f64::total_cmp);
    let cap = alpha.min(1.0 - alpha) * (1.0 - 1e-6);
    let mut h = h.min(cap);
    for attempt in 0..2 {
        let spacing = quantile_type7(&s, alpha + h) - quantile_type7(&s, alpha - h);
        if spacing > 0.0 {
            return Ok(2.0 * h / spacing);
        }
        if attempt == 0 {
            h = (1.5 * h).min(cap);
        }
    }
    Err(EsregError::DegenerateSpacing)
}

/// Per-row density `2h / (x_i'(beta(alpha + h) - beta(alpha - h)) - delta)`,
/// truncated at zero.
pub fn density_nid(sample: &RegressionSample, alpha: f64, h: f64) -> Result<Vec<f64>> {
    const DELTA: f64 = 1e-10;
    let h = h.min(alpha.min(1.0 - alpha) * (1.0 - 1e-6));
    let hi = quantile_fit(sample, ProbabilityLevel::new(alpha + h)?)?;
    let lo = quantile_fit(sample, ProbabilityLevel::new(alpha - h)?)?;
    let diff: Vec<f64> = hi.coefficients.iter().zip(&lo.coefficients).map(|(a, b)| a - b).collect();
    Ok(sample
        .predict(&diff)
        .into_iter()
        .map(|d| {
            let denom = d - DELTA;
            if denom > 0.0 {
                2.0 * h / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// Sample variance of the non-positive quantile residuals.
pub fn truncvar_ind(quantile_residuals: &[f64]) -> Result<f64> {
    let negatives = quantile_residuals.iter().filter(|&&u| u < 0.0).count();
    if negatives < 2 {
        return Err(EsregError::InsufficientTail(negatives));
    }
    let tail: Vec<f64> = quantile_residuals.iter().copied().filter(|&u| u <= 0.0).collect();
    let m = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / m;
    Ok(tail.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (m - 1.0))
}

/// `Var(u | u <= 0)` for `u ~ N(mu, sigma^2)`.
pub fn truncated_normal_variance(mu: f64, sigma: f64) -> f64 {
    sigma * sigma * norm_truncated_variance(-mu / sigma)
}

/// Location-scale model `u = x'zeta + (x'phi) eps` for quantile residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleModel {
    pub zeta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ScaleModel {
    pub fn location(&self, x: &DMatrix<f64>) -> Vec<f64> {
        linear_predictor(x, &self.zeta)
    }

    pub fn scale(&self, x: &DMatrix<f64>) -> Vec<f64> {
        linear_predictor(x, &self.phi)
    }
}

fn neg_gaussian_loglik(u: &[f64], x: &DMatrix<f64>, params: &[f64]) -> f64 {
    let k = x.ncols();
    let mu = linear_predictor(x, &params[..k]);
    let s = linear_predictor(x, &params[k..]);
    let mut total = 0.0;
    for i in 0..u.len() {
        if !(s[i] > 0.0) {
            return f64::INFINITY;
        }
        let r = (u[i] - mu[i]) / s[i];
        total += s[i].ln() + 0.5 * r * r;
    }
    total / u.len() as f64
}

/// Gaussian quasi-maximum-likelihood fit of the scale model.
pub fn fit_scale_model(quantile_residuals: &[f64], x: &DMatrix<f64>) -> Result<ScaleModel> {
    let n = quantile_residuals.len();
    let k = x.ncols();
    if x.nrows() != n {
        return Err(EsregError::Dimension(format!("{n} residuals, {} design rows", x.nrows())));
    }
    let zeta = ols(x, quantile_residuals)?;
    let mu = linear_predictor(x, &zeta);
    let abs_dev: Vec<f64> = quantile_residuals.iter().zip(&mu).map(|(u, m)| (u - m).abs()).collect();
    let mut phi: Vec<f64> = ols(x, &abs_dev)?
        .into_iter()
        .map(|v| v * (std::f64::consts::PI / 2.0).sqrt())
        .collect();
    if linear_predictor(x, &phi).iter().any(|&s| s <= 0.0) {
        let mean = abs_dev.iter().sum::<f64>() / n as f64;
        let sd = (quantile_residuals.iter().zip(&mu).map(|(u, m)| (u - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let ones = x.column(0).iter().all(|&v| v == 1.0);
        if !ones || !(sd > 0.0) {
            return Err(EsregError::NonConvergence(format!(
                "no feasible scale start (mean absolute deviation {mean})"
            )));
        }
        phi = vec![0.0; k];
        phi[0] = sd;
    }
    let mut params = zeta.clone();
    params.extend_from_slice(&phi);
    let spread = abs_dev.iter().sum::<f64>() / n as f64;
    let opts = NelderMeadOptions { max_iter: 1000 * 2 * k, tolerance: 1e-12 };
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        let steps: Vec<f64> = params.iter().map(|p| 0.1 * p.abs().max(0.1 * spread).max(1e-6)).collect();
        let r = nelder_mead::minimize(|p| neg_gaussian_loglik(quantile_residuals, x, p), &params, &steps, opts);
        params = r.x;
        let improved = best - r.fx;
        best = r.fx;
        if r.converged && improved.abs() <= 1e-12 {
            break;
        }
    }
    if !best.is_finite() {
        return Err(EsregError::NonConvergence("scale-model quasi-likelihood".into()));
    }
    let model = ScaleModel { zeta: params[..k].to_vec(), phi: params[k..].to_vec() };
    if model.scale(x).iter().any(|&s| !(s > 0.0)) {
        return Err(EsregError::NonConvergence("non-positive fitted scale".into()));
    }
    Ok(model)
}

/// Per-row truncated variance under the scale model with normal errors.
pub fn truncvar_scl_normal(quantile_residuals: &[f64], x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let model = fit_scale_model(quantile_residuals, x)?;
    Ok(model
        .location(x)
        .iter()
        .zip(model.scale(x))
        .map(|(&m, s)| truncated_normal_variance(m, s))
        .collect())
}

/// Gaussian kernel density estimate with closed-form truncated moments.
#[derive(Debug, Clone)]
pub struct KernelDensity {
    points: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensity {
    /// Silverman's rule `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
    pub fn silverman(points: &[f64]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(EsregError::DegenerateKde);
        }
        let mean = points.iter().sum::<f64>() / n as f64;
        let sd = (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let mut s = points.to_vec();
        s.sort_by(f64::total_cmp);
        let iqr = quantile_type7(&s, 0.75) - quantile_type7(&s, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        if !(spread > 1e-12 * (1.0 + mean.abs())) || !spread.is_finite() {
            return Err(EsregError::DegenerateKde);
        }
        Ok(Self { points: s, bandwidth: 0.9 * spread * (n as f64).powf(-0.2) })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let b = self.bandwidth;
        self.points.iter().map(|p| norm_pdf((z - p) / b)).sum::<f64>() / (self.points.len() as f64 * b)
    }

    /// `(P(Z <= c), E[Z 1{Z <= c}], E[Z^2 1{Z <= c}])`.
    fn partial_moments(&self, c: f64) -> (f64, f64, f64) {
        let b = self.bandwidth;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for &p in &self.points {
            let d = (c - p) / b;
            if d < -40.0 {
                continue;
            }
            let cdf = norm_cdf(d);
            let pdf = norm_pdf(d);
            m0 += cdf;
            m1 += p * cdf - b * pdf;
            m2 += (p * p + b * b) * cdf - b * (p + c) * pdf;
        }
        let n = self.points.len() as f64;
        (m0 / n, m1 / n, m2 / n)
    }

    /// `Var(Z | Z <= c)` under the kernel estimate.
    pub fn truncated_variance(&self, c: f64) -> Result<f64> {
        let (m0, m1, m2) = self.partial_moments(c);
        if !(m0 > 1e-300) {
            return Err(EsregError::Quadrature(format!("no kernel mass below {c}")));
        }
        let mean = m1 / m0;
        let v = m2 / m0 - mean * mean;
        if v.is_finite() {
            Ok(v.max(0.0))
        } else {
            Err(EsregError::Quadrature(format!("non-finite truncated variance at {c}")))
        }
    }
}

const KDE_GRID: usize = 2048;

/// Per-row truncated variance under the scale model with a kernel density
/// for the standardized errors.
pub fn truncvar_scl_sp(quantile_residuals: &[f64], x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let model = fit_scale_model(quantile_residuals, x)?;
    let mu = model.location(x);
    let sigma = model.scale(x);
    let eps: Vec<f64> = quantile_residuals
        .iter()
        .zip(mu.iter().zip(&sigma))
        .map(|(u, (m, s))| (u - m) / s)
        .collect();
    let kde = KernelDensity::silverman(&eps)?;
    let cuts: Vec<f64> = mu.iter().zip(&sigma).map(|(m, s)| -m / s).collect();
    let (lo, hi) = cuts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &c| (l.min(c), h.max(c)));
    let n = cuts.len();
    if n <= KDE_GRID || hi - lo < 1e-12 {
        return cuts
            .iter()
            .zip(&sigma)
            .map(|(&c, s)| Ok(s * s * kde.truncated_variance(c)?))
            .collect();
    }
    // truncated variance is smooth in the cut point: tabulate and interpolate
    let step = (hi - lo) / (KDE_GRID - 1) as f64;
    let table: Vec<f64> = (0..KDE_GRID)
        .map(|j| kde.truncated_variance(lo + j as f64 * step))
        .collect::<Result<_>>()?;
    Ok(cuts
        .iter()
        .zip(&sigma)
        .map(|(&c, s)| {
            let t = ((c - lo) / step).clamp(0.0, (KDE_GRID - 1) as f64);
            let j = (t.floor() as usize).min(KDE_GRID - 2);
            let w = t - j as f64;
            s * s * ((1.0 - w) * table[j] + w * table[j + 1])
        })
        .collect())
}

/// Streaming sums of the sandwich blocks over rows.
#[derive(Debug, Clone)]
pub struct SandwichAccumulator {
    fam: SpecificationFamily,
    alpha: f64,
    k: usize,
    rows: usize,
    l11: DMatrix<f64>,
    l22: DMatrix<f64>,
    c11: DMatrix<f64>,
    c12: DMatrix<f64>,
    c22: DMatrix<f64>,
}

impl SandwichAccumulator {
    pub fn new(fam: SpecificationFamily, alpha: f64, k: usize) -> Self {
        let z = || DMatrix::zeros(k, k);
        Self { fam, alpha, k, rows: 0, l11: z(), l22: z(), c11: z(), c12: z(), c22: z() }
    }

    /// Add one row: design `x`, fitted quantile `xq` and ES `xe`, conditional
    /// density `f` at the quantile and truncated variance `tv`.
    pub fn add(&mut self, x: &[f64], xq: f64, xe: f64, f: f64, tv: f64) -> Result<()> {
        let a = self.alpha;
        let (_, g1p) = self.fam.g1_parts(xq);
        let (g2, g2p, _) = self
            .fam
            .g2_parts(xe)
            .ok_or(EsregError::Domain { row: self.rows, value: xe })?;
        let slope = a * g1p + g2;
        let gap = xq - xe;
        let c = (1.0 - a) / a;
        let w_l11 = f * slope / a;
        let w_l22 = g2p;
        let w_c11 = c * slope * slope;
        let w_c12 = c * gap * slope * g2p;
        let w_c22 = g2p * g2p * (tv / a + c * gap * gap);
        for r in 0..self.k {
            for s in 0..=r {
                let xx = x[r] * x[s];
                self.l11[(r, s)] += w_l11 * xx;
                self.l22[(r, s)] += w_l22 * xx;
                self.c11[(r, s)] += w_c11 * xx;
                self.c12[(r, s)] += w_c12 * xx;
                self.c22[(r, s)] += w_c22 * xx;
            }
        }
        self.rows += 1;
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.rows += other.rows;
        self.l11 += &other.l11;
        self.l22 += &other.l22;
        self.c11 += &other.c11;
        self.c12 += &other.c12;
        self.c22 += &other.c22;
        self
    }

    /// Asymptotic covariance `Lambda^{-1} C Lambda^{-1}` of `sqrt(n)(theta - theta_0)`.
    pub fn asymptotic(&self) -> Result<DMatrix<f64>> {
        let k = self.k;
        let n = self.rows as f64;
        if self.rows == 0 {
            return Err(EsregError::InvalidInput("no rows in sandwich".into()));
        }
        let sym = |m: &DMatrix<f64>| {
            let mut m = m / n;
            for r in 0..k {
                for s in 0..r {
                    m[(s, r)] = m[(r, s)];
                }
            }
            m
        };
        let l11_inv = sym(&self.l11)
            .try_inverse()
            .ok_or(EsregError::Singular("quantile block of Lambda"))?;
        let mut out = DMatrix::zeros(2 * k, 2 * k);
        let q = &l11_inv * sym(&self.c11) * &l11_inv;
        out.view_mut((0, 0), (k, k)).copy_from(&q);
        if self.fam.g2 != G2Kind::Absent {
            let l22_inv = sym(&self.l22)
                .try_inverse()
                .ok_or(EsregError::Singular("ES block of Lambda"))?;
            let cross = &l11_inv * sym(&self.c12) * &l22_inv;
            let e = &l22_inv * sym(&self.c22) * &l22_inv;
            out.view_mut((0, k), (k, k)).copy_from(&cross);
            out.view_mut((k, 0), (k, k)).copy_from(&cross.transpose());
            out.view_mut((k, k), (k, k)).copy_from(&e);
        }
        let sym_out = (&out + out.transpose()) * 0.5;
        Ok(sym_out)
    }
}

/// Sandwich for given nuisance values; `theta` and `sample` on the same scale.
pub fn sandwich_with_nuisance(
    fam: SpecificationFamily,
    alpha: f64,
    sample: &RegressionSample,
    theta: &JointParams,
    density: &NuisanceValues,
    truncvar: &NuisanceValues,
) -> Result<DMatrix<f64>> {
    let xq = sample.predict(&theta.theta_q);
    let xe = sample.predict(&theta.theta_e);
    let mut acc = SandwichAccumulator::new(fam, alpha, sample.k());
    for i in 0..sample.n() {
        acc.add(&sample.row(i), xq[i], xe[i], density.at(i), truncvar.at(i))
            .map_err(|e| match e {
                EsregError::Domain { value, .. } => EsregError::Domain { row: i, value },
                other => other,
            })?;
    }
    Ok(acc.asymptotic()? / sample.n() as f64)
}

/// Plug-in sandwich covariance of a fitted model.
pub fn sandwich(
    fit: &FitResult,
    sample: &RegressionSample,
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    opts: &CovOptions,
) -> Result<CovarianceEstimate> {
    opts.validate()?;
    let a = alpha.value();
    let offset = fit.translation_offset;
    let work = if offset != 0.0 { sample.translated(offset) } else { sample.clone() };
    let theta = if offset != 0.0 { fit.theta.shift_intercepts(-offset) } else { fit.theta.clone() };
    let xq = work.predict(&theta.theta_q);
    let resid: Vec<f64> = work.y().iter().zip(&xq).map(|(y, q)| y - q).collect();
    let h = hall_sheather_bandwidth(a, work.n(), opts.bandwidth_eta);
    let density = match opts.density {
        DensityMethod::Iid => NuisanceValues::Scalar(density_iid(&resid, a, h)?),
        DensityMethod::Nid => NuisanceValues::PerRow(density_nid(&work, a, h)?),
    };
    let truncvar = if fam.g2 == G2Kind::Absent {
        NuisanceValues::Scalar(0.0)
    } else {
        match opts.truncvar {
            TruncVarMethod::Ind => NuisanceValues::Scalar(truncvar_ind(&resid)?),
            TruncVarMethod::SclN => NuisanceValues::PerRow(truncvar_scl_normal(&resid, work.x())?),
            TruncVarMethod::SclSp => NuisanceValues::PerRow(truncvar_scl_sp(&resid, work.x())?),
        }
    };
    let matrix = sandwich_with_nuisance(fam, a, &work, &theta, &density, &truncvar)?;
    Ok(CovarianceEstimate { matrix, method: opts.clone(), density_values: density, truncvar_values: truncvar })
}

/// Classical quantile-regression sandwich
/// `alpha (1 - alpha) D1^{-1} D0 D1^{-1} / n` with `D0 = mean x x'` and
/// `D1 = mean f_i x x'`.
pub fn quantile_regression_sandwich(x: &DMatrix<f64>, density: &[f64], alpha: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let d0 = x.transpose() * x / n;
    let mut fx = x.clone();
    for (i, mut row) in fx.row_iter_mut().enumerate() {
        row *= density[i];
    }
    let d1 = x.transpose() * fx / n;
    let d1_inv = d1.try_inverse().ok_or(EsregError::Singular("density-weighted Gram matrix"))?;
    Ok(&d1_inv * d0 * &d1_inv * (alpha * (1.0 - alpha) / n))
}

/// Empirical covariance (divisor `m - 1`) of stacked estimates.
pub fn empirical_covariance(estimates: &[Vec<f64>]) -> DMatrix<f64> {
    let m = estimates.len();
    let d = estimates.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for e in estimates {
        for (a, v) in mean.iter_mut().zip(e) {
            *a += v / m as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for e in estimates {
        for r in 0..d {
            for s in 0..=r {
                cov[(r, s)] += (e[r] - mean[r]) * (e[s] - mean[s]);
            }
        }
    }
    let denom = (m.max(2) - 1) as f64;
    for r in 0..d {
        for s in 0..=r {
            cov[(r, s)] /= denom;
            cov[(s, r)] = cov[(r, s)];
        }
    }
    cov
}

/// Seeded generator for bootstrap replicate `b`: one ChaCha stream per replicate.
fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Nonparametric pairs bootstrap of the M-estimator.
pub fn bootstrap_covariance(
    sample: &RegressionSample,
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    fitopts: &FitOptions,
    reps: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    if reps < 2 {
        return Err(EsregError::InvalidInput("bootstrap needs at least 2 replicates".into()));
    }
    let n = sample.n();
    let results: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let y: Vec<f64> = idx.iter().map(|&i| sample.y()[i]).collect();
            let x = sample.x().select_rows(idx.iter());
            let resample = if sample.has_intercept() {
                RegressionSample::new(y, x)
            } else {
                RegressionSample::with_design(y, x)
            }
            .ok()?;
            let opts = fitopts.with_seed(rng.random());
            m_fit(fam, alpha, &resample, &opts).ok().map(|f| f.theta.stacked())
        })
        .collect();
    let estimates: Vec<Vec<f64>> = results.iter().flatten().cloned().collect();
    let failed = reps - estimates.len();
    if failed * 10 > reps || estimates.len() < 2 {
        return Err(EsregError::Bootstrap { failed, total: reps });
    }
    Ok(CovarianceEstimate {
        matrix: empirical_covariance(&estimates),
        method: CovOptions { bootstrap_reps: reps, rng_seed: seed, ..CovOptions::default() },
        density_values: NuisanceValues::None,
        truncvar_values: NuisanceValues::None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoubleIntegralIdentity {
    pub lhs: f64,
    pub rhs: f64,
}

/// Both sides of the double-integral identity for the ES variance term.
pub fn double_integral_identity(dist: Innovation, alpha: f64) -> Result<DoubleIntegralIdentity> {
    double_integral_identity_scaled(dist, alpha, 1.0)
}

/// As [`double_integral_identity`] for the distribution of `scale * v`.
pub fn double_integral_identity_scaled(dist: Innovation, alpha: f64, scale: f64) -> Result<DoubleIntegralIdentity> {
    ProbabilityLevel::new(alpha)?;
    if !(scale > 0.0) {
        return Err(EsregError::InvalidInput("scale must be positive".into()));
    }
    let cdf = |x: f64| dist.cdf(x / scale);
    let q = scale * dist.quantile(alpha);
    let xi = scale * dist.expected_shortfall(alpha);
    // the integrand is symmetric in (x, y); integrate over y <= x <= q and
    // double, with F(min) = F(y) on that triangle
    let inner = |x: f64| -> f64 {
        let g = |y: f64| cdf(y);
        integrate_lower_tail(&g, x, 1e-13, 60).unwrap_or(f64::NAN) * (1.0 - cdf(x))
    };
    let outer = integrate_lower_tail(&inner, q, 1e-11, 50)?;
    let lhs = 2.0 * outer / (alpha * alpha);
    let tv = scale * scale * dist.truncated_variance(dist.quantile(alpha));
    let rhs = tv / alpha + (1.0 - alpha) / alpha * (q - xi).powi(2);
    if !lhs.is_finite() {
        return Err(EsregError::Quadrature("double integral".into()));
    }
    Ok(DoubleIntegralIdentity { lhs, rhs })
}

/// `int z^2 h(z) dz - (int z h(z) dz)^2` with `h = f / F(0)` on `(-inf, 0]`
/// for `N(mu, sigma^2)`, by adaptive quadrature in standardized units.
pub fn truncated_variance_by_quadrature(mu: f64, sigma: f64) -> Result<f64> {
    let c = -mu / sigma;
    let lo = c.min(0.0) - 12.0;
    let tol = 1e-14 * norm_cdf(c);
    let m0 = adaptive_simpson(&norm_pdf, lo, c, tol, 60)?;
    let m1 = adaptive_simpson(&|w: f64| w * norm_pdf(w), lo, c, tol, 60)? / m0;
    let v = adaptive_simpson(&|w: f64| (w - m1).powi(2) * norm_pdf(w), lo, c, tol, 60)? / m0;
    Ok(sigma * sigma * v)
}

/// Check a family is usable for a sandwich (quantile part identified).
pub fn check_family(fam: &SpecificationFamily) -> Result<()> {
    if fam.g1 == G1Kind::Zero && fam.g2 == G2Kind::Absent {
        return Err(EsregError::InvalidInput("G1 = 0 and G2 = 0 give a constant loss".into()));
    }
    Ok(())
}
