//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits with a failure status if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 6 7`.

use esreg::covariance::{
    double_integral_identity, quantile_regression_sandwich, sandwich, truncated_normal_variance,
    truncated_variance_by_quadrature, CovOptions, DensityMethod, NuisanceValues, TruncVarMethod,
};
use esreg::evaluate::{dominance_verdict, fixed_parameter_track, murphy_diagram, ForecastModel, MurphyGrid, ScoreFamily, Verdict};
use esreg::fit::{m_fit, quantile_fit, FitOptions};
use esreg::simulate::{
    covariance_benchmark, covariance_table, mc_mse_study, mc_scaled_covariance, CovEstimator, DgpKind, DgpSpec,
    StudyConfig,
};
use esreg::speclib::{joint_loss, AMode};
use esreg::{G1Kind, G2Kind, JointParams, ProbabilityLevel, RegressionSample, SpecificationFamily};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Outcome = Result<String, String>;

fn lvl(a: f64) -> ProbabilityLevel {
    ProbabilityLevel::new(a).expect("valid level")
}

fn families() -> [SpecificationFamily; 5] {
    G2Kind::ALL.map(SpecificationFamily::with_g2)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Closed-form asymptotic covariance of the intercept-only normal model at
/// alpha = 0.025, from the normal quantile, density, tail mean and
/// truncated variance.
fn normal_sigma() -> [[f64; 2]; 2] {
    let a = 0.025;
    let z = esreg::dist::norm_quantile(a);
    let f = esreg::dist::norm_pdf(z);
    let xi = -f / a;
    let tv = esreg::dist::norm_truncated_variance(z);
    let s11 = a * (1.0 - a) / (f * f);
    let s12 = (1.0 - a) * (z - xi) / f;
    let s22 = tv / a + (1.0 - a) / a * (z - xi).powi(2);
    [[s11, s12], [s12, s22]]
}

fn c1_intercept_only() -> Outcome {
    let sample = RegressionSample::intercept_only((-4..=5).map(f64::from).collect()).map_err(|e| e.to_string())?;
    // empirical oracle: lower 0.2-quantile and the mean of the values at or below it
    let mut sorted = sample.y().to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[(0.2f64 * 10.0).ceil() as usize - 1];
    let tail: Vec<f64> = sorted.iter().copied().filter(|&v| v <= q).collect();
    let e = tail.iter().sum::<f64>() / tail.len() as f64;
    let mut worst = 0.0f64;
    for fam in families() {
        let r = m_fit(fam, lvl(0.2), &sample, &FitOptions::default()).map_err(|e| format!("{}: {e}", fam.g2))?;
        worst = worst.max((r.theta.theta_q[0] - q).abs()).max((r.theta.theta_e[0] - e).abs());
    }
    check(worst < 1e-2, format!("oracle ({q}, {e}), max deviation {worst:.2e}"))
}

fn c2_closed_form_sigma() -> Outcome {
    let spec = DgpSpec::new(DgpKind::IidNormal, lvl(0.025), 2000).map_err(|e| e.to_string())?;
    let cfg = StudyConfig::new(lvl(0.025), 5000, 20_250);
    let (m, failures) =
        mc_scaled_covariance(&spec, SpecificationFamily::with_g2(G2Kind::NegLog), &cfg).map_err(|e| e.to_string())?;
    let sigma = normal_sigma();
    let mut worst = 0.0f64;
    for r in 0..2 {
        for c in 0..2 {
            worst = worst.max((m[(r, c)] / sigma[r][c] - 1.0).abs());
        }
    }
    check(
        worst < 0.10,
        format!(
            "n*cov = [{:.3}, {:.3}; {:.3}], closed form [{:.3}, {:.3}; {:.3}], max rel. error {:.3}, {failures} failed fits",
            m[(0, 0)],
            m[(0, 1)],
            m[(1, 1)],
            sigma[0][0],
            sigma[0][1],
            sigma[1][1],
            worst
        ),
    )
}

fn c3_table_one() -> Outcome {
    let published = [9.2, 8.4, 11.8, 16.6, 17.2];
    let rows = covariance_table(DgpKind::Dgp1, lvl(0.025), &families(), 10_000_000, 1).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (row, want) in rows.iter().zip(published) {
        let got = row.full.ok_or("missing full norm")?;
        worst = worst.max((got / want - 1.0).abs());
        detail.push(format!("{} {got:.2}", row.family));
    }
    check(worst < 0.05, format!("{} (max rel. error {worst:.3})", detail.join(", ")))
}

fn c4_mse_trend() -> Outcome {
    let ns = [250, 1000, 2000];
    let fams = families();
    let cfg = StudyConfig::new(lvl(0.025), 1000, 4);
    let report = mc_mse_study(&[DgpKind::Dgp1], &fams, &ns, &cfg).map_err(|e| e.to_string())?;
    let mse = |fam: &str, n: usize| {
        report.mse.iter().find(|c| c.family == fam && c.n == n).map(|c| c.mse).unwrap_or(f64::NAN)
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for fam in &fams {
        let name = fam.g2.name();
        let v: Vec<f64> = ns.iter().map(|&n| mse(name, n)).collect();
        ok &= v.windows(2).all(|w| w[1] < w[0]);
        detail.push(format!("{name} {:.3}/{:.3}/{:.3}", v[0], v[1], v[2]));
    }
    let exp250 = mse("exp", 250);
    for g2 in [G2Kind::NegLog, G2Kind::NegSqrt, G2Kind::NegInverse] {
        ok &= mse(g2.name(), 250) < exp250;
    }
    let failures: usize = report.mse.iter().map(|c| c.failures).sum();
    check(ok, format!("{} ({failures} failed fits)", detail.join(", ")))
}

fn c5_covariance_ranking() -> Outcome {
    let fam = [SpecificationFamily::with_g2(G2Kind::NegLog)];
    let cfg = StudyConfig::new(lvl(0.025), 500, 5);
    let report =
        covariance_benchmark(&[DgpKind::Dgp1, DgpKind::Dgp3], &fam, &[2000], &cfg, 0).map_err(|e| e.to_string())?;
    let err = |kind: DgpKind, est: CovEstimator| {
        report
            .covariance
            .iter()
            .find(|c| c.dgp == kind && c.estimator == est)
            .map(|c| c.mean_frobenius)
            .unwrap_or(f64::NAN)
    };
    let ests = [CovEstimator::IidInd, CovEstimator::NidSclN, CovEstimator::NidSclSp];
    let dgp1: Vec<f64> = ests.iter().map(|&e| err(DgpKind::Dgp1, e)).collect();
    let iid_rank = dgp1.iter().filter(|&&v| v < dgp1[0]).count() + 1;
    let (scl_n, scl_sp) = (err(DgpKind::Dgp3, CovEstimator::NidSclN), err(DgpKind::Dgp3, CovEstimator::NidSclSp));
    check(
        iid_rank <= 2 && scl_sp < scl_n,
        format!(
            "DGP-1 iid/ind {:.2}, nid/scl-n {:.2}, nid/scl-sp {:.2} (iid rank {iid_rank}); DGP-3 scl-n {scl_n:.2}, scl-sp {scl_sp:.2}",
            dgp1[0], dgp1[1], dgp1[2]
        ),
    )
}

fn c6_homogeneity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let alpha = lvl(rng.random_range(0.01..0.99));
        let c: f64 = rng.random_range(0.05..20.0);
        let y: f64 = rng.random_range(-10.0..10.0);
        let k = rng.random_range(1..4usize);
        let mut x = vec![1.0];
        x.extend((1..k).map(|_| rng.random_range(-2.0..2.0)));
        let draw_theta = |rng: &mut ChaCha8Rng| {
            let q: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut e: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            // keep x'e negative
            let xe: f64 = x.iter().zip(&e).map(|(a, b)| a * b).sum();
            e[0] -= xe.max(0.0) + rng.random_range(0.05..3.0);
            JointParams::new(q, e).expect("k >= 1")
        };
        let t1 = draw_theta(&mut rng);
        let t2 = draw_theta(&mut rng);
        let scale = |t: &JointParams| JointParams {
            theta_q: t.theta_q.iter().map(|v| c * v).collect(),
            theta_e: t.theta_e.iter().map(|v| c * v).collect(),
        };
        let loss = |g2: G2Kind, y: f64, t: &JointParams| {
            joint_loss(SpecificationFamily::new(G1Kind::Zero, g2), alpha, y, &x, t, AMode::Zero)
        };
        for (g2, b) in [(G2Kind::NegInverse, -1.0), (G2Kind::NegSqrt, 0.5)] {
            let base = loss(g2, y, &t1).map_err(|e| e.to_string())?;
            let scaled = loss(g2, c * y, &scale(&t1)).map_err(|e| e.to_string())?;
            let want = c.powf(b) * base;
            worst = worst.max((scaled - want).abs() / want.abs().max(1e-300));
        }
        let d = loss(G2Kind::NegLog, y, &t1).map_err(|e| e.to_string())? - loss(G2Kind::NegLog, y, &t2).map_err(|e| e.to_string())?;
        let ds = loss(G2Kind::NegLog, c * y, &scale(&t1)).map_err(|e| e.to_string())?
            - loss(G2Kind::NegLog, c * y, &scale(&t2)).map_err(|e| e.to_string())?;
        worst = worst.max((ds - d).abs() / d.abs().max(1e-300));
    }
    check(worst < 1e-10, format!("10^4 cases, max relative deviation {worst:.2e}"))
}

fn c7_strict_consistency() -> Outcome {
    let support = [-3.0, -1.5, -0.5, 0.7, 2.0];
    let probs = [0.1, 0.15, 0.25, 0.3, 0.2];
    let alpha = 0.2;
    // generalized lower quantile and ES of the discrete law
    let mut cum = 0.0;
    let mut q = f64::NAN;
    for (v, p) in support.iter().zip(probs) {
        cum += p;
        if cum >= alpha - 1e-12 {
            q = *v;
            break;
        }
    }
    let below: f64 = support.iter().zip(probs).filter(|(v, _)| **v < q).map(|(v, p)| v * p).sum();
    let mass_below: f64 = support.iter().zip(probs).filter(|(v, _)| **v < q).map(|(_, p)| p).sum();
    let es = (below + (alpha - mass_below) * q) / alpha;
    let mut misses = Vec::new();
    for fam in families() {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=700 {
            let qg = -4.0 + 0.01 * i as f64;
            for j in 0..=399 {
                let eg = -4.0 + 0.01 * j as f64;
                let theta = JointParams::new(vec![qg], vec![eg]).expect("k = 1");
                let mut total = 0.0;
                for (y, p) in support.iter().zip(probs) {
                    total += p * joint_loss(fam, lvl(alpha), *y, &[1.0], &theta, AMode::Zero).map_err(|e| e.to_string())?;
                }
                if total < best.0 {
                    best = (total, qg, eg);
                }
            }
        }
        if (best.1 - q).abs() > 5e-3 || (best.2 - es).abs() > 5e-3 {
            misses.push(format!("{}: argmin ({:.2}, {:.2})", fam.g2, best.1, best.2));
        }
    }
    check(misses.is_empty(), format!("analytic ({q}, {es}); {}", if misses.is_empty() { "all families agree".into() } else { misses.join(", ") }))
}

fn c8_double_integral() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (alpha, closed) in [(0.025, normal_sigma()[1][1]), (0.5, 2.0 * (1.0 - 2.0 / std::f64::consts::PI) + 2.0 / std::f64::consts::PI)] {
        let r = double_integral_identity(esreg::dist::Innovation::Normal, alpha).map_err(|e| e.to_string())?;
        ok &= (r.lhs - r.rhs).abs() < 1e-3 && (r.rhs - closed).abs() < 1e-3;
        detail.push(format!("alpha {alpha}: lhs {:.6}, rhs {:.6}", r.lhs, r.rhs));
    }
    check(ok, detail.join("; "))
}

fn c9_scl_normal_quadrature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mu: f64 = rng.random_range(-3.0..3.0);
        let sigma: f64 = rng.random_range(0.2..3.0);
        let closed = truncated_normal_variance(mu, sigma);
        let quad = truncated_variance_by_quadrature(mu, sigma).map_err(|e| e.to_string())?;
        worst = worst.max((closed - quad).abs() / closed.abs().max(1.0));
    }
    check(worst < 1e-6, format!("100 random (mu, sigma), max deviation {worst:.2e}"))
}

fn c10_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 1000;
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(0.0..3.0) });
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            0.5 - x[(i, 1)] + (1.0 + 0.5 * x[(i, 1)]) * v
        })
        .collect();
    let sample = RegressionSample::new(y, x.clone()).map_err(|e| e.to_string())?;
    let alpha = lvl(0.1);
    let fam = SpecificationFamily::quantile_only();
    let qr = quantile_fit(&sample, alpha).map_err(|e| e.to_string())?;
    let fit = m_fit(fam, alpha, &sample, &FitOptions::default()).map_err(|e| e.to_string())?;
    let dtheta = fit.theta.theta_q.iter().zip(&qr.coefficients).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let opts = CovOptions { density: DensityMethod::Nid, truncvar: TruncVarMethod::Ind, ..CovOptions::default() };
    let est = sandwich(&fit, &sample, fam, alpha, &opts).map_err(|e| e.to_string())?;
    let NuisanceValues::PerRow(dens) = &est.density_values else {
        return Err("expected per-row densities".into());
    };
    let classical = quantile_regression_sandwich(&x, dens, alpha.value()).map_err(|e| e.to_string())?;
    let block = est.matrix.view((0, 0), (2, 2));
    let dcov = (block - &classical).amax() / classical.amax();
    check(dtheta < 1e-4 && dcov < 1e-8, format!("parameter deviation {dtheta:.2e}, sandwich relative deviation {dcov:.2e}"))
}

fn c11_murphy() -> Outcome {
    let model = ForecastModel::default();
    let alpha = lvl(0.025);
    let series = model.simulate(5001, 11).map_err(|e| e.to_string())?;
    let truth = model.true_params(alpha);
    let a = fixed_parameter_track(&series, &truth, 1, "truth").map_err(|e| e.to_string())?;
    let b = fixed_parameter_track(&series, &truth.shift_intercepts(0.5), 1, "shifted").map_err(|e| e.to_string())?;
    let curve = murphy_diagram(&a, &b, alpha, &MurphyGrid::Auto { points: 50 }, &ScoreFamily::default())
        .map_err(|e| e.to_string())?;
    let max = curve.mean_diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let verdict = dominance_verdict(&curve);
    check(
        max <= 0.0 && verdict == Verdict::ADominates,
        format!("T = {}, max mean difference {max:.3e}, verdict {verdict:?}", a.days.len()),
    )
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "intercept-only equivalence on the 10-point sample", c1_intercept_only),
        (2, "intercept-only normal covariance closed form", c2_closed_form_sigma),
        (3, "true covariance norms on DGP-1", c3_table_one),
        (4, "MSE decreases in n; homogeneous beat exp", c4_mse_trend),
        (5, "covariance estimator ranking", c5_covariance_ranking),
        (6, "positive homogeneity identities", c6_homogeneity),
        (7, "strict consistency on a discrete law", c7_strict_consistency),
        (8, "double-integral variance identity", c8_double_integral),
        (9, "scale-model truncated variance vs quadrature", c9_scl_normal_quadrature),
        (10, "quantile regression nesting", c10_nesting),
        (11, "Murphy dominance of the true forecasts", c11_murphy),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS [{secs:.1}s] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL [{secs:.1}s] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
