//! M- and Z-estimation of the joint quantile/ES regression.
//!
//! The M-estimator minimizes the average joint loss with Nelder-Mead inside
//! an Iterated Local Search:
//!
//! 1. starting values from quantile regressions at `alpha` and `alpha_tilde`;
//! 2. Nelder-Mead from the starting values;
//! 3. perturb the incumbent with Gaussian noise scaled by the standard errors
//!    of the starting quantile regressions;
//! 4. re-optimize and keep the result only if the loss strictly decreases;
//! 5. stop after `max_ils_stale` consecutive non-improvements.
//!
//! The ILS result is refined by block-coordinate steps: an exact weighted
//! quantile regression for `theta_q` given `theta_e`, then damped Newton for
//! `theta_e` given `theta_q`. Both steps only accept non-increasing loss.
//!
//! For families whose ES must be negative the model is fitted on
//! `y - max(y)` and `max(y)` is added back to both intercepts.

use crate::covariance::{density_iid, hall_sheather_bandwidth};
use crate::dist::{norm_cdf, norm_tail_mean};
use crate::error::{EsregError, Result};
use crate::nelder_mead::{self, NelderMeadOptions, NelderMeadResult};
use crate::quantreg::{self, QuantileFit};
use crate::speclib::{
    average_loss_or_inf, linear_predictor, psi_weights, G1Kind, G2Kind, JointParams,
    ProbabilityLevel, RegressionSample, SpecificationFamily,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Estimator {
    #[default]
    M,
    /// Minimizes the squared norm of the summed estimating equations.
    /// Numerically unstable: the equations redescend to zero as `x'theta_e`
    /// goes to minus infinity, so the search often diverges.
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_ils_stale: usize,
    /// Nelder-Mead iteration budget; `None` means `500 * 2k`.
    pub nm_max_iter: Option<usize>,
    pub nm_tolerance: f64,
    pub rng_seed: u64,
    /// `None` translates exactly for the negative-domain families.
    pub translate: Option<bool>,
    pub estimator: Estimator,
    /// Z-estimator divergence bound on `|theta_e|`; `None` means
    /// `2 (1 + max |y|)` on the fitting scale.
    pub z_divergence_bound: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_ils_stale: 10,
            nm_max_iter: None,
            nm_tolerance: 1e-8,
            rng_seed: 0,
            translate: None,
            estimator: Estimator::M,
            z_divergence_bound: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_ils_stale < 1 {
            return Err(EsregError::InvalidInput("max_ils_stale must be at least 1".into()));
        }
        if !(self.nm_tolerance > 0.0) {
            return Err(EsregError::InvalidInput("nm_tolerance must be positive".into()));
        }
        if self.nm_max_iter == Some(0) {
            return Err(EsregError::InvalidInput("nm_max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { rng_seed: seed, ..self.clone() }
    }

    fn nm_iter(&self, dim: usize) -> usize {
        self.nm_max_iter.unwrap_or(500 * dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: JointParams,
    /// Objective at the solution on the fitting scale: the average loss
    /// for M-estimation, `|sum psi|^2` for Z-estimation.
    pub avg_loss: f64,
    pub ils_iterations: usize,
    pub translation_offset: f64,
    pub converged: bool,
    /// Euclidean norm of the mean estimating equations at the solution.
    pub psi_norm_at_solution: f64,
    /// Objective of every accepted ILS iterate, in order.
    pub loss_history: Vec<f64>,
    pub estimator: Estimator,
}

/// Level `alpha_tilde = Phi(xi_alpha)` whose normal quantile equals the
/// normal ES at `alpha`.
pub fn alpha_tilde(alpha: f64) -> f64 {
    norm_cdf(norm_tail_mean(alpha))
}

fn qr_budget(k: usize) -> usize {
    1000 * k.max(2)
}

/// Quantile regression at level `alpha`.
pub fn quantile_fit(sample: &RegressionSample, alpha: ProbabilityLevel) -> Result<QuantileFit> {
    quantreg::fit_quantile(sample.x(), sample.y(), alpha.value(), qr_budget(sample.k()), 1e-10)
}

struct Start {
    theta: JointParams,
    /// Perturbation standard deviations, length `2k`.
    scales: Vec<f64>,
}

/// Starting values: quantile regressions at `alpha` and `alpha_tilde`.
pub fn starting_values(sample: &RegressionSample, alpha: ProbabilityLevel) -> Result<JointParams> {
    Ok(start_with_scales(sample, alpha)?.theta)
}

fn start_with_scales(sample: &RegressionSample, alpha: ProbabilityLevel) -> Result<Start> {
    let a = alpha.value();
    let at = alpha_tilde(a);
    let q = quantile_fit(sample, alpha)?;
    let e = quantile_fit(sample, ProbabilityLevel::new(at)?)?;
    let mut scales = qr_standard_errors(sample, a, &q.coefficients);
    scales.extend(qr_standard_errors(sample, at, &e.coefficients));
    Ok(Start { theta: JointParams::new(q.coefficients, e.coefficients)?, scales })
}

/// Standard errors of a quantile regression under the iid sparsity estimate,
/// `tau (1 - tau) / f^2 (X'X)^{-1}`. Zero when the density cannot be estimated.
fn qr_standard_errors(sample: &RegressionSample, tau: f64, coef: &[f64]) -> Vec<f64> {
    let k = sample.k();
    let fitted = sample.predict(coef);
    let resid: Vec<f64> = sample.y().iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let h = hall_sheather_bandwidth(tau, sample.n(), 0.05);
    let Ok(f) = density_iid(&resid, tau, h) else {
        return vec![0.0; k];
    };
    let gram = sample.x().transpose() * sample.x();
    let Some(inv) = gram.try_inverse() else {
        return vec![0.0; k];
    };
    (0..k)
        .map(|j| (tau * (1.0 - tau) / (f * f) * inv[(j, j)]).max(0.0).sqrt())
        .collect()
}

/// `theta + N(0, diag(scales^2))`, coordinates in stacked order.
pub fn perturb<R: Rng + ?Sized>(theta: &JointParams, scales: &[f64], rng: &mut R) -> JointParams {
    let stacked: Vec<f64> = theta
        .stacked()
        .iter()
        .zip(scales)
        .map(|(t, s)| {
            let z: f64 = rng.sample(StandardNormal);
            t + s * z
        })
        .collect();
    JointParams::from_stacked(&stacked)
}

/// M-estimation by Iterated Local Search.
pub fn m_fit(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_with(fam, alpha, sample, &FitOptions { estimator: Estimator::M, ..opts.clone() })
}

/// Z-estimation: minimizes `|sum_i psi_i|^2` from the same starting values.
///
/// The estimating equations redescend to zero as `x'theta_e -> -inf`, so
/// this estimator is numerically unstable and diverges in many setups; a
/// [`EsregError::Divergence`] is returned when `|theta_e|` leaves the bound.
pub fn z_fit(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_with(fam, alpha, sample, &FitOptions { estimator: Estimator::Z, ..opts.clone() })
}

/// Dispatch on `opts.estimator`.
pub fn fit(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_with(fam, alpha, sample, opts)
}

fn fit_with(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    if fam.g2 == G2Kind::Absent && fam.g1 != G1Kind::Linear {
        return Err(EsregError::InvalidInput(
            "G2 = 0 requires G1(z) = z, otherwise the loss is constant".into(),
        ));
    }
    if let Some(c) = constant_response(sample) {
        return degenerate_fit(fam, alpha, sample, c, opts);
    }
    let translate = opts.translate.unwrap_or_else(|| fam.requires_negative_es());
    if !translate {
        return fit_on_scale(fam, alpha, sample, opts);
    }
    if !sample.has_intercept() {
        return Err(EsregError::InvalidInput(
            "translating the response needs an intercept column".into(),
        ));
    }
    let offset = sample.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let work = sample.translated(offset);
    let mut res = fit_on_scale(fam, alpha, &work, opts)?;
    res.theta = res.theta.shift_intercepts(offset);
    res.translation_offset = offset;
    Ok(res)
}

fn constant_response(sample: &RegressionSample) -> Option<f64> {
    let y0 = sample.y()[0];
    (sample.has_intercept() && sample.y().iter().all(|&v| v == y0)).then_some(y0)
}

/// Both functionals of a degenerate response equal the constant itself.
/// The loss is reported on a scale where the constant is inside the domain.
fn degenerate_fit(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    c: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let k = sample.k();
    let mut coef = vec![0.0; k];
    coef[0] = c;
    let theta = JointParams::new(coef.clone(), coef)?;
    let offset = if fam.requires_negative_es() && c >= 0.0 { c + 1.0 } else { 0.0 };
    let work = sample.translated(offset);
    let local = theta.shift_intercepts(-offset);
    let xq = work.predict(&local.theta_q);
    let xe = work.predict(&local.theta_e);
    let loss = average_loss_or_inf(&fam, alpha.value(), work.y(), &xq, &xe);
    let psi = mean_psi(&fam, alpha.value(), &work, &local).map(|p| norm(&p)).unwrap_or(f64::NAN);
    let objective = if opts.estimator == Estimator::Z { 0.0 } else { loss };
    Ok(FitResult {
        theta,
        avg_loss: objective,
        ils_iterations: 0,
        translation_offset: offset,
        converged: true,
        psi_norm_at_solution: psi,
        loss_history: vec![objective],
        estimator: opts.estimator,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_psi(fam: &SpecificationFamily, alpha: f64, sample: &RegressionSample, theta: &JointParams) -> Option<Vec<f64>> {
    let xq = sample.predict(&theta.theta_q);
    let xe = sample.predict(&theta.theta_e);
    let sum = summed_psi(fam, alpha, sample.x(), sample.y(), &xq, &xe)?;
    let n = sample.n() as f64;
    Some(sum.into_iter().map(|v| v / n).collect())
}

fn summed_psi(
    fam: &SpecificationFamily,
    alpha: f64,
    x: &DMatrix<f64>,
    y: &[f64],
    xq: &[f64],
    xe: &[f64],
) -> Option<Vec<f64>> {
    let k = x.ncols();
    let n = y.len();
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    for i in 0..n {
        let (a, b) = psi_weights(fam, alpha, y[i], xq[i], xe[i])?;
        w1[i] = a;
        w2[i] = b;
    }
    let mut out = vec![0.0; 2 * k];
    for j in 0..k {
        let col = x.column(j);
        out[j] = col.iter().zip(&w1).map(|(x, w)| x * w).sum();
        out[k + j] = col.iter().zip(&w2).map(|(x, w)| x * w).sum();
    }
    Some(out)
}

/// Objective over the stacked parameter vector.
struct Objective<'a> {
    fam: SpecificationFamily,
    alpha: f64,
    sample: &'a RegressionSample,
    estimator: Estimator,
    /// Fixed `theta_e` when only `theta_q` is free (quantile-only family).
    fixed_e: Option<Vec<f64>>,
}

impl Objective<'_> {
    fn full(&self, v: &[f64]) -> JointParams {
        match &self.fixed_e {
            Some(e) => JointParams { theta_q: v.to_vec(), theta_e: e.clone() },
            None => JointParams::from_stacked(v),
        }
    }

    fn value(&self, v: &[f64]) -> f64 {
        let theta = self.full(v);
        self.value_at(&theta)
    }

    fn value_at(&self, theta: &JointParams) -> f64 {
        let x = self.sample.x();
        let xq = linear_predictor(x, &theta.theta_q);
        let xe = linear_predictor(x, &theta.theta_e);
        match self.estimator {
            Estimator::M => average_loss_or_inf(&self.fam, self.alpha, self.sample.y(), &xq, &xe),
            Estimator::Z => match summed_psi(&self.fam, self.alpha, x, self.sample.y(), &xq, &xe) {
                Some(s) => s.iter().map(|v| v * v).sum(),
                None => f64::INFINITY,
            },
        }
    }

    fn free(&self, theta: &JointParams) -> Vec<f64> {
        match self.fixed_e {
            Some(_) => theta.theta_q.clone(),
            None => theta.stacked(),
        }
    }
}

fn fit_on_scale(
    fam: SpecificationFamily,
    alpha: ProbabilityLevel,
    sample: &RegressionSample,
    opts: &FitOptions,
) -> Result<FitResult> {
    let a = alpha.value();
    let k = sample.k();
    let start = start_with_scales(sample, alpha)?;
    let quantile_only = fam.g2 == G2Kind::Absent;
    let theta0 = make_feasible(&fam, sample, start.theta);
    let objective = Objective {
        fam,
        alpha: a,
        sample,
        estimator: opts.estimator,
        fixed_e: quantile_only.then(|| theta0.theta_e.clone()),
    };
    let scales: Vec<f64> = if quantile_only { start.scales[..k].to_vec() } else { start.scales.clone() };
    let x0 = objective.free(&theta0);
    let dim = x0.len();
    let y_scale = sample.y().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let steps: Vec<f64> = x0
        .iter()
        .zip(&scales)
        .map(|(x, s)| s.max(0.05 * x.abs()).max(1e-4 * (1.0 + y_scale)))
        .collect();
    let tolerance = match opts.estimator {
        Estimator::M => opts.nm_tolerance,
        Estimator::Z => opts.nm_tolerance * opts.nm_tolerance,
    };
    let nm_opts = NelderMeadOptions { max_iter: opts.nm_iter(dim), tolerance };
    let divergence_bound = opts.z_divergence_bound.unwrap_or(2.0 * (1.0 + y_scale));
    let check_divergence = |v: &[f64]| -> Result<()> {
        if opts.estimator != Estimator::Z {
            return Ok(());
        }
        let e = objective.full(v).theta_e;
        let n = norm(&e);
        if n > divergence_bound || !n.is_finite() {
            Err(EsregError::Divergence { norm: n, bound: divergence_bound })
        } else {
            Ok(())
        }
    };

    let run = |from: &[f64]| -> NelderMeadResult {
        nelder_mead::minimize(|v| objective.value(v), from, &steps, nm_opts)
    };

    let mut best = run(&x0);
    if !best.fx.is_finite() {
        return Err(EsregError::NonConvergence(
            "no feasible point found from the starting values".into(),
        ));
    }
    check_divergence(&best.x)?;
    let mut history = vec![best.fx];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut stale = 0;
    let mut ils_iterations = 0;
    let perturbable = scales.iter().any(|&s| s > 0.0);
    while perturbable && stale < opts.max_ils_stale {
        ils_iterations += 1;
        let incumbent = objective.full(&best.x);
        let mut candidate = perturb(&incumbent, &pad_scales(&scales, quantile_only, k), &mut rng);
        if quantile_only {
            candidate.theta_e = incumbent.theta_e.clone();
        }
        let candidate = make_feasible(&fam, sample, candidate);
        let r = run(&objective.free(&candidate));
        check_divergence(&r.x)?;
        if r.fx < best.fx {
            best = r;
            history.push(best.fx);
            stale = 0;
        } else {
            stale += 1;
        }
    }

    let mut theta = objective.full(&best.x);
    let mut value = best.fx;
    if opts.estimator == Estimator::M {
        let (t, v) = refine(&objective, theta, value);
        theta = t;
        value = v;
        if value < *history.last().unwrap_or(&f64::INFINITY) {
            history.push(value);
        }
    }
    let psi_norm = mean_psi(&fam, a, sample, &theta).map(|p| norm(&p)).unwrap_or(f64::NAN);
    Ok(FitResult {
        theta,
        avg_loss: value,
        ils_iterations,
        translation_offset: 0.0,
        converged: best.converged,
        psi_norm_at_solution: psi_norm,
        loss_history: history,
        estimator: opts.estimator,
    })
}

fn pad_scales(scales: &[f64], quantile_only: bool, k: usize) -> Vec<f64> {
    if quantile_only {
        let mut s = scales.to_vec();
        s.extend(std::iter::repeat_n(0.0, k));
        s
    } else {
        scales.to_vec()
    }
}

/// Shift the ES intercept down until every fitted ES is negative.
fn make_feasible(fam: &SpecificationFamily, sample: &RegressionSample, mut theta: JointParams) -> JointParams {
    if !fam.requires_negative_es() || !sample.has_intercept() {
        return theta;
    }
    let xe = sample.predict(&theta.theta_e);
    let top = xe.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top >= 0.0 {
        let (lo, hi) = sample
            .y()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        theta.theta_e[0] -= top + 0.01 * (1.0 + (hi - lo));
    }
    theta
}

/// Alternate an exact weighted quantile regression in `theta_q` with a
/// damped Newton solve in `theta_e`.
fn refine(objective: &Objective<'_>, mut theta: JointParams, mut value: f64) -> (JointParams, f64) {
    let fam = objective.fam;
    let sample = objective.sample;
    let a = objective.alpha;
    for _ in 0..4 {
        let before = value;
        let xe = sample.predict(&theta.theta_e);
        let g1w = if fam.g1 == G1Kind::Linear { 1.0 } else { 0.0 };
        let weights: Option<Vec<f64>> = xe
            .iter()
            .map(|&e| fam.g2_parts(e).map(|(g2, _, _)| g1w + g2 / a))
            .collect();
        if let Some(w) = weights {
            if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
                if let Some((q, _)) = quantreg::vertex_polish(sample.x(), sample.y(), &w, a, &theta.theta_q) {
                    let cand = JointParams { theta_q: q, theta_e: theta.theta_e.clone() };
                    let v = objective.value_at(&cand);
                    if v <= value + 1e-12 * (1.0 + value.abs()) {
                        theta = cand;
                        value = v.min(value);
                    }
                }
            }
        }
        if fam.g2 != G2Kind::Absent {
            let (e, v) = newton_es(objective, &theta, value);
            if v < value {
                theta.theta_e = e;
                value = v;
            }
        }
        if before - value <= 1e-14 * (1.0 + value.abs()) {
            break;
        }
    }
    (theta, value)
}

/// Minimize the loss over `theta_e` with `theta_q` fixed.
fn newton_es(objective: &Objective<'_>, theta: &JointParams, value: f64) -> (Vec<f64>, f64) {
    let fam = objective.fam;
    let sample = objective.sample;
    let a = objective.alpha;
    let k = sample.k();
    let x = sample.x();
    let y = sample.y();
    let xq = sample.predict(&theta.theta_q);
    // loss in theta_e is sum G2(x'e)(x'e - c_i) - Gcal2(x'e)
    let c: Vec<f64> = y
        .iter()
        .zip(&xq)
        .map(|(&y, &q)| if y <= q { q - (q - y) / a } else { q })
        .collect();
    let mut e = theta.theta_e.clone();
    let mut current = value;
    for _ in 0..50 {
        let xe = linear_predictor(x, &e);
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..y.len() {
            let Ok(v) = fam.eval(xe[i]) else { return (theta.theta_e.clone(), value) };
            let gw = v.g2p * (xe[i] - c[i]);
            let hw = v.g2pp * (xe[i] - c[i]) + v.g2p;
            for r in 0..k {
                let xr = x[(i, r)];
                grad[r] += gw * xr;
                for s in 0..=r {
                    hess[(r, s)] += hw * xr * x[(i, s)];
                }
            }
        }
        for r in 0..k {
            for s in 0..r {
                hess[(s, r)] = hess[(r, s)];
            }
        }
        let n = y.len() as f64;
        grad /= n;
        hess /= n;
        if grad.amax() < 1e-15 {
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -grad.clone(),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = e.iter().zip(step.iter()).map(|(e, s)| e + t * s).collect();
            let v = objective.value_at(&JointParams { theta_q: theta.theta_q.clone(), theta_e: trial.clone() });
            if v < current {
                e = trial;
                current = v;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (e, current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speclib::{average_loss, AMode};
    use approx::assert_relative_eq;
    use rand_distr::Distribution;

    fn lvl(a: f64) -> ProbabilityLevel {
        ProbabilityLevel::new(a).unwrap()
    }

    fn ten_points() -> RegressionSample {
        RegressionSample::intercept_only((-4..=5).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn alpha_tilde_values() {
        assert_relative_eq!(alpha_tilde(0.025), 0.009698740353981153, epsilon = 1e-12);
        assert_relative_eq!(alpha_tilde(0.5), 0.21246874184168096, epsilon = 1e-12);
    }

    #[test]
    fn quantile_fit_on_ten_points() {
        let fit = quantile_fit(&ten_points(), lvl(0.2)).unwrap();
        assert!((fit.coefficients[0] + 3.0).abs() < 1e-3);
    }

    #[test]
    fn starting_values_for_constant_sample() {
        let x = DMatrix::from_fn(30, 2, |i, j| if j == 0 { 1.0 } else { (i % 7) as f64 });
        let s = RegressionSample::new(vec![-1.5; 30], x).unwrap();
        let t = starting_values(&s, lvl(0.05)).unwrap();
        assert_relative_eq!(t.theta_q[0], -1.5, epsilon = 1e-9);
        assert_relative_eq!(t.theta_e[0], -1.5, epsilon = 1e-9);
        assert_relative_eq!(t.theta_q[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(t.theta_e[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn perturb_contracts() {
        let theta = JointParams::new(vec![1.0, 2.0], vec![-1.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb(&theta, &[0.0; 4], &mut rng), theta);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let scales = [0.1, 0.2, 0.3, 0.4];
        for _ in 0..5 {
            assert_eq!(perturb(&theta, &scales, &mut r1), perturb(&theta, &scales, &mut r2));
        }
        let reps = 100_000;
        let mut sums = [0.0; 4];
        let mut sq = [0.0; 4];
        let base = theta.stacked();
        for _ in 0..reps {
            let p = perturb(&theta, &scales, &mut rng).stacked();
            for j in 0..4 {
                let d = p[j] - base[j];
                sums[j] += d;
                sq[j] += d * d;
            }
        }
        for j in 0..4 {
            let mean = sums[j] / reps as f64;
            let sd = (sq[j] / reps as f64 - mean * mean).sqrt();
            assert!((sd / scales[j] - 1.0).abs() < 0.02, "component {j}: {sd}");
        }
    }

    #[test]
    fn ten_point_m_fit() {
        for g2 in G2Kind::ALL {
            let r = m_fit(SpecificationFamily::with_g2(g2), lvl(0.2), &ten_points(), &FitOptions::default()).unwrap();
            assert!((r.theta.theta_q[0] + 3.0).abs() < 1e-2, "{g2}: {:?}", r.theta);
            assert!((r.theta.theta_e[0] + 3.5).abs() < 1e-2, "{g2}: {:?}", r.theta);
        }
    }

    #[test]
    fn constant_sample_m_fit() {
        for (c, g2) in [(2.0, G2Kind::NegLog), (-0.7, G2Kind::NegSqrt), (3.0, G2Kind::Exp)] {
            let s = RegressionSample::intercept_only(vec![c; 25]).unwrap();
            let r = m_fit(SpecificationFamily::with_g2(g2), lvl(0.1), &s, &FitOptions::default()).unwrap();
            assert!((r.theta.theta_q[0] - c).abs() < 1e-6);
            assert!((r.theta.theta_e[0] - c).abs() < 1e-6);
            assert!(r.avg_loss.is_finite());
            let z = z_fit(SpecificationFamily::with_g2(g2), lvl(0.1), &s, &FitOptions::default()).unwrap();
            assert_eq!(z.theta, r.theta);
        }
    }

    fn normal_sample(n: usize, seed: u64) -> RegressionSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        RegressionSample::intercept_only(y).unwrap()
    }

    #[test]
    fn ils_history_is_monotone_and_translation_is_coherent() {
        let sample = normal_sample(400, 5);
        let fam = SpecificationFamily::with_g2(G2Kind::NegLog);
        let opts = FitOptions { rng_seed: 17, ..FitOptions::default() };
        let r = m_fit(fam, lvl(0.05), &sample, &opts).unwrap();
        assert!(r.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let offset = r.translation_offset;
        assert_eq!(offset, sample.y().iter().copied().fold(f64::MIN, f64::max));

        let translated = sample.translated(offset);
        let r2 = m_fit(fam, lvl(0.05), &translated, &FitOptions { translate: Some(false), ..opts.clone() }).unwrap();
        assert_eq!(r2.translation_offset, 0.0);
        assert_relative_eq!(r2.theta.theta_q[0] + offset, r.theta.theta_q[0], epsilon = 1e-6);
        assert_relative_eq!(r2.theta.theta_e[0] + offset, r.theta.theta_e[0], epsilon = 1e-6);
    }

    #[test]
    fn m_fit_is_deterministic_and_not_worse_than_start() {
        let sample = normal_sample(300, 8);
        let fam = SpecificationFamily::with_g2(G2Kind::LogisticLog);
        let opts = FitOptions { rng_seed: 3, ..FitOptions::default() };
        let a = m_fit(fam, lvl(0.1), &sample, &opts).unwrap();
        let b = m_fit(fam, lvl(0.1), &sample, &opts).unwrap();
        assert_eq!(a, b);
        let start = starting_values(&sample, lvl(0.1)).unwrap();
        let l0 = average_loss(fam, lvl(0.1), &sample, &start, AMode::Zero).unwrap();
        assert!(a.avg_loss <= l0);
        assert!(!a.loss_history.is_empty());
    }

    #[test]
    fn z_fit_finds_exact_root() {
        // n alpha = 10 is an integer, so the empirical frequency can equal
        // alpha exactly and both moment conditions have an interior root.
        let sample = normal_sample(40, 21);
        let alpha = lvl(0.25);
        let fam = SpecificationFamily::with_g2(G2Kind::NegLog);
        let r = z_fit(fam, alpha, &sample, &FitOptions::default()).unwrap();
        assert!(r.psi_norm_at_solution < 1e-6, "{}", r.psi_norm_at_solution);

        // bisection oracle for the ES equation at the fitted quantile
        let q = r.theta.theta_q[0];
        let psi2 = |e: f64| -> f64 {
            sample
                .y()
                .iter()
                .map(|&y| e - q + if y <= q { (q - y) / 0.25 } else { 0.0 })
                .sum::<f64>()
        };
        let (mut lo, mut hi) = (-20.0, q);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if psi2(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(r.theta.theta_e[0], 0.5 * (lo + hi), epsilon = 1e-6);
    }

    #[test]
    fn quantile_only_family_reproduces_quantile_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 500;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 3.0 });
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                1.0 - x[(i, 1)] + (1.0 + 0.5 * x[(i, 1)]) * z
            })
            .collect();
        let sample = RegressionSample::new(y, x).unwrap();
        let qr = quantile_fit(&sample, lvl(0.1)).unwrap();
        let r = m_fit(SpecificationFamily::quantile_only(), lvl(0.1), &sample, &FitOptions::default()).unwrap();
        for j in 0..2 {
            assert!((r.theta.theta_q[j] - qr.coefficients[j]).abs() < 1e-4);
        }
    }

    #[test]
    fn invalid_options() {
        let s = ten_points();
        let bad = FitOptions { max_ils_stale: 0, ..FitOptions::default() };
        assert!(m_fit(SpecificationFamily::with_g2(G2Kind::Exp), lvl(0.2), &s, &bad).is_err());
        let bad = FitOptions { nm_tolerance: 0.0, ..FitOptions::default() };
        assert!(m_fit(SpecificationFamily::with_g2(G2Kind::Exp), lvl(0.2), &s, &bad).is_err());
        let fam = SpecificationFamily::new(G1Kind::Zero, G2Kind::Absent);
        assert!(m_fit(fam, lvl(0.2), &s, &FitOptions::default()).is_err());
    }
}
