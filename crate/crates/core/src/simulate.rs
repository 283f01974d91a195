//! Simulation designs, true parameters and Monte-Carlo studies.
//!
//! All designs have the form `y = x'gamma + (x'eta) v` with a unit-variance
//! innovation `v`, so the true quantile and ES parameters are
//! `gamma + z_alpha eta` and `gamma + xi_alpha eta`.

use crate::covariance::{
    bootstrap_covariance, empirical_covariance, sandwich, CovOptions, DensityMethod,
    SandwichAccumulator, TruncVarMethod,
};
use crate::dist::{norm_cdf, Innovation};
use crate::error::{EsregError, Result};
use crate::fit::{m_fit, FitOptions};
use crate::speclib::{JointParams, ProbabilityLevel, RegressionSample, SpecificationFamily};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Gaussian-copula correlation giving Pearson correlation 0.5 between the
/// uniform covariates, `2 sin(pi / 12)`.
pub fn copula_rho() -> f64 {
    2.0 * (std::f64::consts::PI / 12.0).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpKind {
    /// `Y | X ~ N(-X2, 1)` with `X2 ~ chi2(1)`.
    Dgp1,
    /// `Y | X ~ N(-X2, (1 + 0.5 X2)^2)` with `X2 ~ chi2(1)`.
    Dgp2,
    /// Correlated uniform covariates, location-scale standardized t5 errors.
    Dgp3,
    /// Intercept-only standard normal responses.
    IidNormal,
}

impl DgpKind {
    pub fn k(self) -> usize {
        match self {
            DgpKind::Dgp1 | DgpKind::Dgp2 => 2,
            DgpKind::Dgp3 => 3,
            DgpKind::IidNormal => 1,
        }
    }

    pub fn gamma(self) -> Vec<f64> {
        match self {
            DgpKind::Dgp1 | DgpKind::Dgp2 => vec![0.0, -1.0],
            DgpKind::Dgp3 => vec![0.0, 1.0, -1.0],
            DgpKind::IidNormal => vec![0.0],
        }
    }

    pub fn eta(self) -> Vec<f64> {
        match self {
            DgpKind::Dgp1 => vec![1.0, 0.0],
            DgpKind::Dgp2 => vec![1.0, 0.5],
            DgpKind::Dgp3 => vec![1.0, 1.0, 1.0],
            DgpKind::IidNormal => vec![1.0],
        }
    }

    pub fn innovation(self) -> Innovation {
        match self {
            DgpKind::Dgp3 => Innovation::StudentT5,
            _ => Innovation::Normal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DgpKind::Dgp1 => "dgp1",
            DgpKind::Dgp2 => "dgp2",
            DgpKind::Dgp3 => "dgp3",
            DgpKind::IidNormal => "iid-normal",
        }
    }

    fn tag(self) -> u64 {
        match self {
            DgpKind::Dgp1 => 1,
            DgpKind::Dgp2 => 2,
            DgpKind::Dgp3 => 3,
            DgpKind::IidNormal => 4,
        }
    }

    /// One covariate row, intercept first.
    pub fn draw_covariates<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        match self {
            DgpKind::Dgp1 | DgpKind::Dgp2 => {
                let z: f64 = rng.sample(StandardNormal);
                vec![1.0, z * z]
            }
            DgpKind::Dgp3 => {
                let rho = copula_rho();
                let z1: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * e;
                vec![1.0, norm_cdf(z1), norm_cdf(z2)]
            }
            DgpKind::IidNormal => vec![1.0],
        }
    }

    pub fn draw_innovation<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self.innovation() {
            Innovation::Normal => rng.sample(StandardNormal),
            Innovation::StudentT5 => {
                let t = StudentT::new(5.0).expect("valid degrees of freedom");
                t.sample(rng) / Innovation::t5_scale()
            }
        }
    }
}

impl std::str::FromStr for DgpKind {
    type Err = EsregError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "dgp1" => Ok(DgpKind::Dgp1),
            "2" | "dgp2" => Ok(DgpKind::Dgp2),
            "3" | "dgp3" => Ok(DgpKind::Dgp3),
            "iid" | "iid-normal" => Ok(DgpKind::IidNormal),
            other => Err(EsregError::InvalidInput(format!("unknown design {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub alpha: ProbabilityLevel,
    pub n: usize,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, alpha: ProbabilityLevel, n: usize) -> Result<Self> {
        if n < 50 {
            return Err(EsregError::InvalidInput(format!("sample size {n} is below 50")));
        }
        Ok(Self { kind, alpha, n })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dgp_sample<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> RegressionSample {
    let kind = spec.kind;
    let k = kind.k();
    let (gamma, eta) = (kind.gamma(), kind.eta());
    let mut x = DMatrix::zeros(spec.n, k);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let row = kind.draw_covariates(rng);
        let v = kind.draw_innovation(rng);
        y.push(dot(&row, &gamma) + dot(&row, &eta) * v);
        for (j, r) in row.iter().enumerate() {
            x[(i, j)] = *r;
        }
    }
    RegressionSample::from_parts_unchecked(y, x)
}

pub fn true_params(spec: &DgpSpec) -> JointParams {
    true_params_at(spec.kind, spec.alpha.value())
}

fn true_params_at(kind: DgpKind, alpha: f64) -> JointParams {
    let inv = kind.innovation();
    let z = inv.quantile(alpha);
    let xi = inv.expected_shortfall(alpha);
    let (gamma, eta) = (kind.gamma(), kind.eta());
    JointParams {
        theta_q: gamma.iter().zip(&eta).map(|(g, e)| g + z * e).collect(),
        theta_e: gamma.iter().zip(&eta).map(|(g, e)| g + xi * e).collect(),
    }
}

/// Least squares on the rows with `y_i <= x_i' theta_q`.
pub fn oracle_es_fit(sample: &RegressionSample, theta_q_true: &[f64]) -> Result<Vec<f64>> {
    let q = sample.predict(theta_q_true);
    let k = sample.k();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (i, (&y, &qi)) in sample.y().iter().zip(&q).enumerate() {
        if y <= qi {
            let row = sample.row(i);
            for r in 0..k {
                rhs[r] += row[r] * y;
                for s in 0..k {
                    gram[(r, s)] += row[r] * row[s];
                }
            }
        }
    }
    let chol = gram.cholesky().ok_or(EsregError::Singular("truncated Gram matrix"))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Q,
    Es,
    Full,
}

fn block_view(m: &DMatrix<f64>, block: Block) -> DMatrix<f64> {
    let d = m.nrows();
    let k = d / 2;
    match block {
        Block::Full => m.clone(),
        Block::Q => m.view((0, 0), (k, k)).into_owned(),
        Block::Es => m.view((k, k), (k, k)).into_owned(),
    }
}

/// Frobenius norm of the on-and-below-diagonal entries of a block.
pub fn frobenius_lower(m: &DMatrix<f64>, block: Block) -> f64 {
    let b = block_view(m, block);
    let mut s = 0.0;
    for r in 0..b.nrows() {
        for c in 0..=r {
            s += b[(r, c)] * b[(r, c)];
        }
    }
    s.sqrt()
}

/// [`frobenius_lower`] divided by the square root of the number of
/// lower-triangular entries (root mean square entry), the scale used when
/// comparing blocks of different size.
pub fn frobenius_lower_rms(m: &DMatrix<f64>, block: Block) -> f64 {
    let d = block_view(m, block).nrows() as f64;
    frobenius_lower(m, block) / (d * (d + 1.0) / 2.0).sqrt()
}

/// `Lambda^{-1} C Lambda^{-1}` at the true parameters by Monte-Carlo
/// integration over the covariates, with exact conditional densities and
/// truncated variances.
pub fn true_asymptotic_covariance(
    spec: &DgpSpec,
    fam: SpecificationFamily,
    mc_n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    const CHUNK: usize = 1 << 16;
    let kind = spec.kind;
    let a = spec.alpha.value();
    let theta = true_params(spec);
    let eta = kind.eta();
    let inv = kind.innovation();
    let z = inv.quantile(a);
    let f0 = inv.pdf(z);
    let tv0 = inv.truncated_variance(z);
    let chunks = mc_n.div_ceil(CHUNK);
    let partial: Vec<Result<SandwichAccumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let rows = CHUNK.min(mc_n - c * CHUNK);
            let mut acc = SandwichAccumulator::new(fam, a, kind.k());
            for _ in 0..rows {
                let x = kind.draw_covariates(&mut rng);
                let s = dot(&x, &eta);
                acc.add(&x, dot(&x, &theta.theta_q), dot(&x, &theta.theta_e), f0 / s, s * s * tv0)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total: Option<SandwichAccumulator> = None;
    for p in partial {
        let p = p?;
        total = Some(match total {
            None => p,
            Some(t) => t.merge(&p),
        });
    }
    total.ok_or_else(|| EsregError::InvalidInput("mc_n must be positive".into()))?.asymptotic()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovTableRow {
    pub family: String,
    pub q: f64,
    /// Absent for the quantile-regression row.
    pub es: Option<f64>,
    pub full: Option<f64>,
}

/// Root-mean-square lower-triangular norms of the true asymptotic
/// covariance for each family, plus a quantile-regression row.
pub fn covariance_table(
    kind: DgpKind,
    alpha: ProbabilityLevel,
    families: &[SpecificationFamily],
    mc_n: usize,
    seed: u64,
) -> Result<Vec<CovTableRow>> {
    if mc_n < 1_000_000 {
        return Err(EsregError::InvalidInput(format!("mc_n = {mc_n} is below 10^6")));
    }
    let spec = DgpSpec { kind, alpha, n: mc_n };
    let mut rows = Vec::new();
    for fam in families {
        let m = true_asymptotic_covariance(&spec, *fam, mc_n, seed)?;
        rows.push(CovTableRow {
            family: fam.g2.name().to_string(),
            q: frobenius_lower_rms(&m, Block::Q),
            es: Some(frobenius_lower_rms(&m, Block::Es)),
            full: Some(frobenius_lower_rms(&m, Block::Full)),
        });
    }
    let m = true_asymptotic_covariance(&spec, SpecificationFamily::quantile_only(), mc_n, seed)?;
    rows.push(CovTableRow {
        family: "quantile-regression".into(),
        q: frobenius_lower_rms(&m, Block::Q),
        es: None,
        full: None,
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCell {
    pub dgp: DgpKind,
    pub family: String,
    pub n: usize,
    /// Sum over the `2k` parameters of the mean squared error.
    pub mse: f64,
    pub failures: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovEstimator {
    IidInd,
    NidSclN,
    NidSclSp,
    Bootstrap,
}

impl CovEstimator {
    pub fn name(self) -> &'static str {
        match self {
            CovEstimator::IidInd => "iid/ind",
            CovEstimator::NidSclN => "nid/scl-n",
            CovEstimator::NidSclSp => "nid/scl-sp",
            CovEstimator::Bootstrap => "bootstrap",
        }
    }

    fn plug_in(self) -> Option<(DensityMethod, TruncVarMethod)> {
        match self {
            CovEstimator::IidInd => Some((DensityMethod::Iid, TruncVarMethod::Ind)),
            CovEstimator::NidSclN => Some((DensityMethod::Nid, TruncVarMethod::SclN)),
            CovEstimator::NidSclSp => Some((DensityMethod::Nid, TruncVarMethod::SclSp)),
            CovEstimator::Bootstrap => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovBenchCell {
    pub dgp: DgpKind,
    pub family: String,
    pub n: usize,
    pub estimator: CovEstimator,
    /// Mean over replications of `frobenius_lower(n (estimate - empirical))`.
    pub mean_frobenius: f64,
    pub failures: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub mse: Vec<MseCell>,
    pub covariance: Vec<CovBenchCell>,
    pub reps: usize,
    pub seed: u64,
}

/// Generator for replication `rep` of the cell `(kind, n)`. Families share
/// the same samples (common random numbers).
fn cell_rng(seed: u64, kind: DgpKind, n: usize, rep: usize) -> ChaCha8Rng {
    let cell = seed ^ (kind.tag() << 56) ^ ((n as u64) << 24);
    let mut rng = ChaCha8Rng::seed_from_u64(cell);
    rng.set_stream(rep as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub alpha: ProbabilityLevel,
    pub reps: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl StudyConfig {
    pub fn new(alpha: ProbabilityLevel, reps: usize, seed: u64) -> Self {
        Self { alpha, reps, seed, fit: FitOptions::default() }
    }
}

/// Mean squared errors of the M-estimator per design, family and size.
pub fn mc_mse_study(
    dgps: &[DgpKind],
    families: &[SpecificationFamily],
    ns: &[usize],
    cfg: &StudyConfig,
) -> Result<McReport> {
    if cfg.reps < 2 {
        return Err(EsregError::InvalidInput("reps must be at least 2".into()));
    }
    let mut report = McReport { reps: cfg.reps, seed: cfg.seed, ..McReport::default() };
    for &kind in dgps {
        for &n in ns {
            let spec = DgpSpec::new(kind, cfg.alpha, n)?;
            let truth = true_params(&spec).stacked();
            let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = cell_rng(cfg.seed, kind, n, rep);
                    let sample = dgp_sample(&spec, &mut rng);
                    let fit_seed: u64 = rng.random();
                    families
                        .iter()
                        .map(|fam| {
                            m_fit(*fam, cfg.alpha, &sample, &cfg.fit.with_seed(fit_seed)).ok().map(|f| {
                                f.theta.stacked().iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum()
                            })
                        })
                        .collect()
                })
                .collect();
            for (j, fam) in families.iter().enumerate() {
                let ok: Vec<f64> = per_rep.iter().filter_map(|r| r[j]).collect();
                let failures = cfg.reps - ok.len();
                let mse = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
                report.mse.push(MseCell { dgp: kind, family: fam.g2.name().into(), n, mse, failures, reps: cfg.reps });
            }
        }
    }
    Ok(report)
}

/// Estimates from repeated fits on one design: `n` times the empirical
/// covariance of the estimates, and the number of failed fits.
pub fn mc_scaled_covariance(
    spec: &DgpSpec,
    fam: SpecificationFamily,
    cfg: &StudyConfig,
) -> Result<(DMatrix<f64>, usize)> {
    let estimates: Vec<Option<Vec<f64>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = cell_rng(cfg.seed, spec.kind, spec.n, rep);
            let sample = dgp_sample(spec, &mut rng);
            let fit_seed: u64 = rng.random();
            m_fit(fam, spec.alpha, &sample, &cfg.fit.with_seed(fit_seed)).ok().map(|f| f.theta.stacked())
        })
        .collect();
    let ok: Vec<Vec<f64>> = estimates.into_iter().flatten().collect();
    let failures = cfg.reps - ok.len();
    if ok.len() < 2 {
        return Err(EsregError::NonConvergence(format!("{failures} of {} fits failed", cfg.reps)));
    }
    Ok((empirical_covariance(&ok) * spec.n as f64, failures))
}

/// Accuracy of the covariance estimators against the Monte-Carlo covariance
/// of the estimates. `bootstrap_reps = 0` leaves out the bootstrap.
pub fn covariance_benchmark(
    dgps: &[DgpKind],
    families: &[SpecificationFamily],
    ns: &[usize],
    cfg: &StudyConfig,
    bootstrap_reps: usize,
) -> Result<McReport> {
    if cfg.reps < 50 {
        return Err(EsregError::InvalidInput("covariance benchmark needs reps >= 50".into()));
    }
    let mut estimators = vec![CovEstimator::IidInd, CovEstimator::NidSclN, CovEstimator::NidSclSp];
    if bootstrap_reps > 0 {
        estimators.push(CovEstimator::Bootstrap);
    }
    let mut report = McReport { reps: cfg.reps, seed: cfg.seed, ..McReport::default() };
    for &kind in dgps {
        for &n in ns {
            let spec = DgpSpec::new(kind, cfg.alpha, n)?;
            for fam in families {
                type Rep = Option<(Vec<f64>, Vec<Option<DMatrix<f64>>>)>;
                let per_rep: Vec<Rep> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|rep| {
                        let mut rng = cell_rng(cfg.seed, kind, n, rep);
                        let sample = dgp_sample(&spec, &mut rng);
                        let fit_seed: u64 = rng.random();
                        let opts = cfg.fit.with_seed(fit_seed);
                        let fit = m_fit(*fam, cfg.alpha, &sample, &opts).ok()?;
                        let estimates = estimators
                            .iter()
                            .map(|est| match est.plug_in() {
                                Some((density, truncvar)) => {
                                    let co = CovOptions { density, truncvar, ..CovOptions::default() };
                                    sandwich(&fit, &sample, *fam, cfg.alpha, &co).ok().map(|c| c.matrix)
                                }
                                None => bootstrap_covariance(&sample, *fam, cfg.alpha, &opts, bootstrap_reps, fit_seed)
                                    .ok()
                                    .map(|c| c.matrix),
                            })
                            .collect();
                        Some((fit.theta.stacked(), estimates))
                    })
                    .collect();
                let fitted: Vec<_> = per_rep.iter().flatten().collect();
                let fit_failures = cfg.reps - fitted.len();
                if fitted.len() < 2 {
                    return Err(EsregError::NonConvergence(format!("{fit_failures} of {} fits failed", cfg.reps)));
                }
                let thetas: Vec<Vec<f64>> = fitted.iter().map(|(t, _)| t.clone()).collect();
                let empirical = empirical_covariance(&thetas);
                for (j, est) in estimators.iter().enumerate() {
                    let norms: Vec<f64> = fitted
                        .iter()
                        .filter_map(|(_, e)| e[j].as_ref())
                        .map(|m| frobenius_lower(&((m - &empirical) * n as f64), Block::Full))
                        .collect();
                    let mean = if norms.is_empty() { f64::NAN } else { norms.iter().sum::<f64>() / norms.len() as f64 };
                    report.covariance.push(CovBenchCell {
                        dgp: kind,
                        family: fam.g2.name().into(),
                        n,
                        estimator: *est,
                        mean_frobenius: mean,
                        failures: fit_failures + fitted.len() - norms.len(),
                        reps: cfg.reps,
                    });
                }
            }
        }
    }
    Ok(report)
}
