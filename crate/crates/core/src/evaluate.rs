//! Rolling VaR/ES forecasts and Murphy-diagram comparisons.
//!
//! The regression forecaster is `q_t = theta_1^q + theta_2^q RV_{t-1}` and
//! `e_t = theta_1^e + theta_2^e RV_{t-1}`, refitted on a trailing window.

use crate::dist::Innovation;
use crate::error::{EsregError, Result};
use crate::fit::{m_fit, FitOptions};
use crate::quantreg::empirical_quantile_lower;
use crate::speclib::{G1Kind, G2Kind, JointParams, ProbabilityLevel, RegressionSample, SpecificationFamily};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Daily returns with realized volatility, keyed by strictly increasing
/// (lexicographically ordered) day identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    dates: Vec<String>,
    returns: Vec<f64>,
    rv: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<String>, returns: Vec<f64>, rv: Vec<f64>) -> Result<Self> {
        if dates.len() != returns.len() || dates.len() != rv.len() {
            return Err(EsregError::Dimension(format!(
                "{} dates, {} returns, {} rv values",
                dates.len(),
                returns.len(),
                rv.len()
            )));
        }
        if let Some(i) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(EsregError::InvalidInput(format!(
                "dates must be strictly increasing: {:?} then {:?}",
                dates[i],
                dates[i + 1]
            )));
        }
        if let Some(i) = rv.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EsregError::InvalidInput(format!("rv must be finite and non-negative (day {})", dates[i])));
        }
        if let Some(i) = returns.iter().position(|v| !v.is_finite()) {
            return Err(EsregError::InvalidInput(format!("non-finite return on day {}", dates[i])));
        }
        Ok(Self { dates, returns, rv })
    }

    /// Aggregate intraday `(date, return)` records, grouped by consecutive
    /// dates: daily return is the sum, RV the root sum of squares.
    pub fn from_intraday(records: &[(String, f64)]) -> Result<Self> {
        let mut dates: Vec<String> = Vec::new();
        let mut days: Vec<Vec<f64>> = Vec::new();
        for (d, r) in records {
            if dates.last() != Some(d) {
                dates.push(d.clone());
                days.push(Vec::new());
            }
            days.last_mut().expect("day pushed above").push(*r);
        }
        let rv = realized_volatility(&days)?;
        let returns = days.iter().map(|d| d.iter().sum()).collect();
        Self::new(dates, returns, rv)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn rv(&self) -> &[f64] {
        &self.rv
    }
}

/// Square root of the sum of squared intraday returns, per day.
pub fn realized_volatility(intraday: &[Vec<f64>]) -> Result<Vec<f64>> {
    intraday
        .iter()
        .enumerate()
        .map(|(i, day)| {
            if day.is_empty() {
                Err(EsregError::InvalidInput(format!("day {i} has no intraday returns")))
            } else {
                Ok(day.iter().map(|r| r * r).sum::<f64>().sqrt())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDay {
    pub date: String,
    pub var: f64,
    pub es: f64,
    pub realized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrack {
    pub label: String,
    pub days: Vec<ForecastDay>,
    /// Days without a forecast because the window fit failed.
    pub gaps: Vec<String>,
}

impl ForecastTrack {
    /// Dates where the ES forecast exceeds the VaR forecast.
    pub fn ordering_violations(&self) -> Vec<String> {
        self.days.iter().filter(|d| d.es > d.var).map(|d| d.date.clone()).collect()
    }

    fn restricted_to(&self, keep: &std::collections::BTreeSet<&str>) -> ForecastTrack {
        ForecastTrack {
            label: self.label.clone(),
            days: self.days.iter().filter(|d| keep.contains(d.date.as_str())).cloned().collect(),
            gaps: self.gaps.clone(),
        }
    }
}

/// Keep only the days present in every track, so that days with failed
/// window fits drop out of all compared tracks together.
pub fn align_tracks(tracks: &[ForecastTrack]) -> Vec<ForecastTrack> {
    let Some(first) = tracks.first() else {
        return Vec::new();
    };
    let mut common: std::collections::BTreeSet<&str> = first.days.iter().map(|d| d.date.as_str()).collect();
    for t in &tracks[1..] {
        let dates: std::collections::BTreeSet<&str> = t.days.iter().map(|d| d.date.as_str()).collect();
        common = common.intersection(&dates).copied().collect();
    }
    tracks.iter().map(|t| t.restricted_to(&common)).collect()
}

/// Empirical VaR and tail mean of the trailing `window` returns.
pub fn historical_simulation(series: &ReturnSeries, alpha: ProbabilityLevel, window: usize) -> Result<ForecastTrack> {
    if window == 0 || series.len() <= window {
        return Err(EsregError::InvalidInput(format!(
            "series of length {} needs more than window = {window} days",
            series.len()
        )));
    }
    let a = alpha.value();
    let days = (window..series.len())
        .map(|t| {
            let past = &series.returns[t - window..t];
            let var = empirical_quantile_lower(past, a);
            let excess: Vec<f64> = past.iter().filter(|&&r| r <= var).map(|r| r - var).collect();
            let es = var + excess.iter().sum::<f64>() / excess.len() as f64;
            ForecastDay { date: series.dates[t].clone(), var, es: es.min(var), realized: series.returns[t] }
        })
        .collect();
    Ok(ForecastTrack { label: format!("hs-{window}"), days, gaps: Vec::new() })
}

/// Window `[t - window, t)` of the regression `r_s` on `(1, RV_{s-1})`.
fn window_sample(series: &ReturnSeries, t: usize, window: usize) -> Result<(RegressionSample, bool)> {
    let rows = t - window..t;
    let y: Vec<f64> = rows.clone().map(|s| series.returns[s]).collect();
    let reg: Vec<f64> = rows.map(|s| series.rv[s - 1]).collect();
    let constant = reg.iter().all(|&v| v == reg[0]);
    if constant {
        return Ok((RegressionSample::intercept_only(y)?, true));
    }
    let x = DMatrix::from_fn(window, 2, |i, j| if j == 0 { 1.0 } else { reg[i] });
    Ok((RegressionSample::new(y, x)?, false))
}

/// One-step-ahead forecasts from the joint regression refitted on a rolling
/// window. Windows whose fit fails become gaps.
pub fn rolling_joint_forecast(
    series: &ReturnSeries,
    alpha: ProbabilityLevel,
    window: usize,
    fam: SpecificationFamily,
    fitopts: &FitOptions,
) -> Result<ForecastTrack> {
    if window < 3 || series.len() <= window + 1 {
        return Err(EsregError::InvalidInput(format!(
            "series of length {} needs more than window + 1 = {} days",
            series.len(),
            window + 1
        )));
    }
    let results: Vec<(usize, Option<ForecastDay>)> = (window + 1..series.len())
        .into_par_iter()
        .map(|t| {
            let day = window_sample(series, t, window).ok().and_then(|(sample, constant)| {
                let opts = fitopts.with_seed(fitopts.rng_seed.wrapping_add(t as u64));
                let fit = m_fit(fam, alpha, &sample, &opts).ok()?;
                let slope = |b: &[f64]| if constant { 0.0 } else { b[1] };
                let rv = series.rv[t - 1];
                Some(ForecastDay {
                    date: series.dates[t].clone(),
                    var: fit.theta.theta_q[0] + slope(&fit.theta.theta_q) * rv,
                    es: fit.theta.theta_e[0] + slope(&fit.theta.theta_e) * rv,
                    realized: series.returns[t],
                })
            });
            (t, day)
        })
        .collect();
    let mut days = Vec::new();
    let mut gaps = Vec::new();
    for (t, d) in results {
        match d {
            Some(d) => days.push(d),
            None => gaps.push(series.dates[t].clone()),
        }
    }
    Ok(ForecastTrack { label: format!("joint-{}", fam.g2.name()), days, gaps })
}

/// Forecasts from fixed parameters `theta = ((q0, q1), (e0, e1))` for days
/// `start..`.
pub fn fixed_parameter_track(series: &ReturnSeries, theta: &JointParams, start: usize, label: &str) -> Result<ForecastTrack> {
    if theta.k() != 2 {
        return Err(EsregError::Dimension("fixed forecasts need an intercept and one slope".into()));
    }
    let days = (start.max(1)..series.len())
        .map(|t| {
            let rv = series.rv[t - 1];
            ForecastDay {
                date: series.dates[t].clone(),
                var: theta.theta_q[0] + theta.theta_q[1] * rv,
                es: theta.theta_e[0] + theta.theta_e[1] * rv,
                realized: series.returns[t],
            }
        })
        .collect();
    Ok(ForecastTrack { label: label.to_string(), days, gaps: Vec::new() })
}

/// Data-generating process for the forecasting regression:
/// `r_t = (c0 + c1 RV_{t-1}) v_t` with `log RV_t` a Gaussian AR(1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub c0: f64,
    pub c1: f64,
    pub log_rv_mean: f64,
    pub log_rv_persistence: f64,
    pub log_rv_sd: f64,
    pub innovation: Innovation,
}

impl Default for ForecastModel {
    fn default() -> Self {
        Self {
            c0: 0.2,
            c1: 0.8,
            log_rv_mean: 0.0,
            log_rv_persistence: 0.9,
            log_rv_sd: 0.3,
            innovation: Innovation::Normal,
        }
    }
}

impl ForecastModel {
    pub fn true_params(&self, alpha: ProbabilityLevel) -> JointParams {
        let z = self.innovation.quantile(alpha.value());
        let xi = self.innovation.expected_shortfall(alpha.value());
        JointParams { theta_q: vec![self.c0 * z, self.c1 * z], theta_e: vec![self.c0 * xi, self.c1 * xi] }
    }

    /// `days` consecutive days labelled `t000000`, `t000001`, ...
    pub fn simulate(&self, days: usize, seed: u64) -> Result<ReturnSeries> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t5 = rand_distr::StudentT::new(5.0).expect("valid degrees of freedom");
        let mut log_rv = self.log_rv_mean;
        let mut prev_rv = log_rv.exp();
        let mut dates = Vec::with_capacity(days);
        let mut returns = Vec::with_capacity(days);
        let mut rv = Vec::with_capacity(days);
        for t in 0..days {
            let v: f64 = match self.innovation {
                Innovation::Normal => rng.sample(StandardNormal),
                Innovation::StudentT5 => rng.sample(t5) / Innovation::t5_scale(),
            };
            returns.push((self.c0 + self.c1 * prev_rv) * v);
            let shock: f64 = rng.sample(StandardNormal);
            log_rv = self.log_rv_mean + self.log_rv_persistence * (log_rv - self.log_rv_mean) + self.log_rv_sd * shock;
            prev_rv = log_rv.exp();
            rv.push(prev_rv);
            dates.push(format!("t{t:06}"));
        }
        ReturnSeries::new(dates, returns, rv)
    }
}

/// Elementary score `S_v(q, e, y)` for threshold `v`.
pub trait ElementaryScore: Send + Sync {
    fn score(&self, v: f64, q: f64, e: f64, y: f64, alpha: f64) -> Result<f64>;
}

#[derive(Clone)]
pub enum ScoreFamily {
    /// Joint loss with `G1 = 0` and `Gcal2` translated by the threshold,
    /// `Gcal2_v(z) = Gcal2(z - v)`. Every member is strictly consistent.
    HomogeneousGrid { base: G2Kind },
    /// A user-supplied elementary score.
    ElementaryExternal(Arc<dyn ElementaryScore>),
}

impl Default for ScoreFamily {
    fn default() -> Self {
        ScoreFamily::HomogeneousGrid { base: G2Kind::LogisticLog }
    }
}

impl std::fmt::Debug for ScoreFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreFamily::HomogeneousGrid { base } => write!(f, "HomogeneousGrid({base})"),
            ScoreFamily::ElementaryExternal(_) => f.write_str("ElementaryExternal"),
        }
    }
}

impl ScoreFamily {
    fn score(&self, v: f64, q: f64, e: f64, y: f64, alpha: f64) -> Result<f64> {
        match self {
            ScoreFamily::HomogeneousGrid { base } => {
                let fam = SpecificationFamily::new(G1Kind::Zero, *base);
                let (g2, _, curly) = fam
                    .g2_parts(e - v)
                    .ok_or(EsregError::Domain { row: 0, value: e - v })?;
                let hit = if y <= q { (q - y) / alpha } else { 0.0 };
                Ok(g2 * (e - q + hit) - curly)
            }
            ScoreFamily::ElementaryExternal(s) => s.score(v, q, e, y, alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MurphyCurve {
    pub thresholds: Vec<f64>,
    pub mean_diff: Vec<f64>,
    /// Half-width of the pointwise 95% band.
    pub band_halfwidth: Vec<f64>,
}

/// Threshold grid for Murphy diagrams.
#[derive(Debug, Clone, PartialEq)]
pub enum MurphyGrid {
    Explicit(Vec<f64>),
    /// `points` equally spaced thresholds covering the ES forecasts of both
    /// tracks with a margin of one range on each side; for families whose
    /// ES argument must be negative the grid lies above every ES forecast.
    Auto { points: usize },
}

impl MurphyGrid {
    fn resolve(&self, a: &ForecastTrack, b: &ForecastTrack, family: &ScoreFamily) -> Result<Vec<f64>> {
        match self {
            MurphyGrid::Explicit(v) if !v.is_empty() => Ok(v.clone()),
            MurphyGrid::Explicit(_) => Err(EsregError::InvalidInput("empty threshold grid".into())),
            MurphyGrid::Auto { points } => {
                let points = (*points).max(2);
                let (lo, hi) = a
                    .days
                    .iter()
                    .chain(&b.days)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), d| (l.min(d.es), h.max(d.es)));
                if !lo.is_finite() {
                    return Err(EsregError::InvalidInput("no forecast days".into()));
                }
                let spread = (hi - lo).max(1e-8 * (1.0 + hi.abs()));
                let negative = matches!(family, ScoreFamily::HomogeneousGrid { base } if base.requires_negative_es());
                let (start, end) = if negative {
                    (hi + 0.01 * spread, hi + 3.0 * spread)
                } else {
                    (lo - spread, hi + spread)
                };
                Ok((0..points).map(|j| start + (end - start) * j as f64 / (points - 1) as f64).collect())
            }
        }
    }
}

const BAND_Z: f64 = 1.96;

/// Mean score difference `S(a) - S(b)` per threshold with a pointwise
/// normal-approximation band. Negative values favour `a`.
pub fn murphy_diagram(
    a: &ForecastTrack,
    b: &ForecastTrack,
    alpha: ProbabilityLevel,
    grid: &MurphyGrid,
    family: &ScoreFamily,
) -> Result<MurphyCurve> {
    if a.days.len() != b.days.len() {
        return Err(EsregError::Misaligned(format!("{} vs {} days", a.days.len(), b.days.len())));
    }
    if let Some(d) = a.days.iter().zip(&b.days).find(|(x, y)| x.date != y.date || x.realized != y.realized) {
        return Err(EsregError::Misaligned(format!("day {} vs {}", d.0.date, d.1.date)));
    }
    if a.days.is_empty() {
        return Err(EsregError::InvalidInput("no forecast days".into()));
    }
    let al = alpha.value();
    let thresholds = grid.resolve(a, b, family)?;
    let t = a.days.len() as f64;
    let mut mean_diff = Vec::with_capacity(thresholds.len());
    let mut band = Vec::with_capacity(thresholds.len());
    for &v in &thresholds {
        let diffs: Vec<f64> = a
            .days
            .iter()
            .zip(&b.days)
            .map(|(x, y)| Ok(family.score(v, x.var, x.es, x.realized, al)? - family.score(v, y.var, y.es, y.realized, al)?))
            .collect::<Result<_>>()?;
        let mean = diffs.iter().sum::<f64>() / t;
        let var = if diffs.len() > 1 {
            diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (t - 1.0)
        } else {
            0.0
        };
        mean_diff.push(mean);
        band.push(BAND_Z * var.sqrt() / t.sqrt());
    }
    Ok(MurphyCurve { thresholds, mean_diff, band_halfwidth: band })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    ADominates,
    BDominates,
    Inconclusive,
}

pub fn dominance_verdict(curve: &MurphyCurve) -> Verdict {
    let pairs = || curve.mean_diff.iter().zip(&curve.band_halfwidth);
    if curve.mean_diff.is_empty() {
        Verdict::Inconclusive
    } else if pairs().all(|(m, b)| m + b < 0.0) {
        Verdict::ADominates
    } else if pairs().all(|(m, b)| m - b > 0.0) {
        Verdict::BDominates
    } else {
        Verdict::Inconclusive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lvl(a: f64) -> ProbabilityLevel {
        ProbabilityLevel::new(a).unwrap()
    }

    fn series_from(returns: Vec<f64>, rv: Vec<f64>) -> ReturnSeries {
        let dates = (0..returns.len()).map(|i| format!("d{i:05}")).collect();
        ReturnSeries::new(dates, returns, rv).unwrap()
    }

    #[test]
    fn realized_volatility_examples() {
        let rv = realized_volatility(&[vec![0.01, -0.01], vec![0.0, 0.0]]).unwrap();
        assert_relative_eq!(rv[0], 0.0002f64.sqrt(), epsilon = 1e-15);
        assert_eq!(rv[1], 0.0);
        let doubled = realized_volatility(&[vec![0.02, -0.02]]).unwrap();
        assert_relative_eq!(doubled[0], 2.0 * rv[0], epsilon = 1e-15);
        assert!(realized_volatility(&[vec![]]).is_err());
    }

    #[test]
    fn series_validation_and_intraday_aggregation() {
        assert!(ReturnSeries::new(vec!["b".into(), "a".into()], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(ReturnSeries::new(vec!["a".into()], vec![0.0], vec![-1.0]).is_err());
        let recs = vec![("a".to_string(), 0.01), ("a".to_string(), -0.01), ("b".to_string(), 0.03)];
        let s = ReturnSeries::from_intraday(&recs).unwrap();
        assert_eq!(s.dates(), &["a".to_string(), "b".to_string()]);
        assert_relative_eq!(s.returns()[1], 0.03);
        assert_relative_eq!(s.rv()[0], 0.0002f64.sqrt());
    }

    #[test]
    fn historical_simulation_examples() {
        let mut r: Vec<f64> = (-4..=5).map(f64::from).collect();
        r.push(0.0);
        let s = series_from(r, vec![1.0; 11]);
        let hs = historical_simulation(&s, lvl(0.2), 10).unwrap();
        assert_eq!(hs.days.len(), 1);
        assert_eq!(hs.days[0].var, -3.0);
        assert_eq!(hs.days[0].es, -3.5);

        let s = series_from(vec![0.7; 30], vec![1.0; 30]);
        let hs = historical_simulation(&s, lvl(0.05), 20).unwrap();
        assert!(hs.days.iter().all(|d| d.var == 0.7 && d.es == 0.7));

        let s = ForecastModel::default().simulate(600, 3).unwrap();
        let hs = historical_simulation(&s, lvl(0.025), 250).unwrap();
        assert!(hs.ordering_violations().is_empty());
        assert!(historical_simulation(&s, lvl(0.025), 600).is_err());
    }

    #[test]
    fn rolling_forecast_with_constant_rv_is_constant() {
        // constant RV leaves an intercept-only model; periodic returns give
        // every window the same contents, hence the same forecast
        let cycle = [-2.1, 0.4, -0.3, 1.2, -0.9, 0.1, 0.8, -1.5, 0.6, -0.2];
        let returns: Vec<f64> = (0..140).map(|t| cycle[t % cycle.len()]).collect();
        let s = series_from(returns, vec![1.3; 140]);
        let fam = SpecificationFamily::with_g2(G2Kind::NegLog);
        let track = rolling_joint_forecast(&s, lvl(0.1), 100, fam, &FitOptions::default()).unwrap();
        assert_eq!(track.days.len(), 39);
        assert!(track.gaps.is_empty());
        let first = &track.days[0];
        assert_relative_eq!(first.var, -2.1, epsilon = 1e-6);
        for d in &track.days {
            assert_relative_eq!(d.var, first.var, epsilon = 1e-6);
            assert_relative_eq!(d.es, first.es, epsilon = 1e-6);
        }
    }

    #[test]
    fn rolling_forecast_on_the_model_recovers_parameters() {
        let model = ForecastModel::default();
        let alpha = lvl(0.1);
        let s = model.simulate(2100, 5).unwrap();
        let fam = SpecificationFamily::with_g2(G2Kind::NegLog);
        let track = rolling_joint_forecast(&s, alpha, 2000, fam, &FitOptions::default()).unwrap();
        let truth = model.true_params(alpha);
        assert!(track.ordering_violations().is_empty());
        for d in &track.days {
            let t = s.dates().iter().position(|x| *x == d.date).unwrap();
            let rv = s.rv()[t - 1];
            let true_var = truth.theta_q[0] + truth.theta_q[1] * rv;
            assert!((d.var - true_var).abs() < 0.25 * true_var.abs(), "{} vs {true_var}", d.var);
        }
    }

    #[test]
    fn murphy_identities() {
        let model = ForecastModel::default();
        let alpha = lvl(0.025);
        let s = model.simulate(800, 6).unwrap();
        let truth = model.true_params(alpha);
        let a = fixed_parameter_track(&s, &truth, 1, "truth").unwrap();
        let b = fixed_parameter_track(&s, &truth.shift_intercepts(0.5), 1, "shifted").unwrap();
        let grid = MurphyGrid::Auto { points: 25 };
        let fam = ScoreFamily::default();
        let same = murphy_diagram(&a, &a, alpha, &grid, &fam).unwrap();
        assert!(same.mean_diff.iter().chain(&same.band_halfwidth).all(|&v| v == 0.0));
        assert_eq!(dominance_verdict(&same), Verdict::Inconclusive);

        let ab = murphy_diagram(&a, &b, alpha, &grid, &fam).unwrap();
        let ba = murphy_diagram(&b, &a, alpha, &grid, &fam).unwrap();
        for (x, y) in ab.mean_diff.iter().zip(&ba.mean_diff) {
            assert_eq!(*x, -*y);
        }
        assert!(ab.band_halfwidth.iter().all(|&b| b >= 0.0));

        let short = ForecastTrack { days: b.days[1..].to_vec(), ..b.clone() };
        assert!(matches!(murphy_diagram(&a, &short, alpha, &grid, &fam), Err(EsregError::Misaligned(_))));
        let aligned = align_tracks(&[a.clone(), short]);
        assert_eq!(aligned[0].days.len(), aligned[1].days.len());
    }

    #[test]
    fn verdict_examples() {
        let c = MurphyCurve { thresholds: vec![0.0, 1.0], mean_diff: vec![-1.0, -1.0], band_halfwidth: vec![0.1, 0.1] };
        assert_eq!(dominance_verdict(&c), Verdict::ADominates);
        let c = MurphyCurve { mean_diff: vec![1.0, 1.0], ..c };
        assert_eq!(dominance_verdict(&c), Verdict::BDominates);
        let c = MurphyCurve { mean_diff: vec![-1.0, 1.0], ..c };
        assert_eq!(dominance_verdict(&c), Verdict::Inconclusive);
    }

    #[test]
    fn average_loss_ordering_matches_integrated_curve() {
        // the grid score at a single threshold v = 0 with the exp base is
        // the joint loss of the Exp family; compare average losses directly
        let model = ForecastModel::default();
        let alpha = lvl(0.05);
        let s = model.simulate(3000, 8).unwrap();
        let truth = model.true_params(alpha);
        let a = fixed_parameter_track(&s, &truth, 1, "truth").unwrap();
        let b = fixed_parameter_track(&s, &truth.shift_intercepts(-0.7), 1, "shifted").unwrap();
        let fam = ScoreFamily::HomogeneousGrid { base: G2Kind::Exp };
        let curve = murphy_diagram(&a, &b, alpha, &MurphyGrid::Explicit(vec![0.0]), &fam).unwrap();
        let exp = SpecificationFamily::with_g2(G2Kind::Exp);
        let loss = |t: &ForecastTrack| {
            t.days
                .iter()
                .map(|d| {
                    crate::speclib::joint_loss(exp, alpha, d.realized, &[1.0], &JointParams::new(vec![d.var], vec![d.es]).unwrap(), crate::speclib::AMode::Zero)
                        .unwrap()
                })
                .sum::<f64>()
                / t.days.len() as f64
        };
        assert_relative_eq!(curve.mean_diff[0], loss(&a) - loss(&b), epsilon = 1e-10);
        let wide = murphy_diagram(&a, &b, alpha, &MurphyGrid::Auto { points: 40 }, &ScoreFamily::default()).unwrap();
        let integral: f64 = wide.mean_diff.iter().sum();
        assert_eq!(integral < 0.0, loss(&a) < loss(&b));
    }
}
