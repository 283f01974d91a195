use crate::config::{parse_count, parse_list, pick, pick_str, ConfigFile};
use crate::io;
use crate::report::{fmt_num, metadata, num, with_suffix, write_csv, write_json, CliError, ErrorKind};
use crate::{Cli, Command, CovtableArgs, FitArgs, ForecastArgs, ModelArgs, MurphyArgs, SimulateArgs};
use esreg::covariance::bootstrap_covariance;
use esreg::evaluate::{
    align_tracks, dominance_verdict, historical_simulation, murphy_diagram, rolling_joint_forecast, ForecastModel,
    ForecastTrack, MurphyGrid, ScoreFamily, Verdict,
};
use esreg::fit::fit;
use esreg::simulate::{covariance_benchmark, covariance_table, mc_mse_study, DgpKind, StudyConfig};
use esreg::speclib::pseudo_r2;
use esreg::{
    sandwich, CovOptions, CovarianceEstimate, DensityMethod, Estimator, FitOptions, FitResult, G1Kind, G2Kind,
    ProbabilityLevel, RegressionSample, SpecificationFamily, TruncVarMethod,
};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use std::path::Path;

const DEFAULT_SEED: u64 = 20_250_101;

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads: Option<usize> = match cli.threads {
        Some(t) => Some(t),
        None => cfg.get("threads")?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::input("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::io(format!("cannot start worker pool: {e}")))?;
    }
    let seed = pick(cli.seed, &cfg, "seed", DEFAULT_SEED)?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cfg, seed),
        Command::Simulate(a) => cmd_simulate(a, &cfg, seed),
        Command::Covtable(a) => cmd_covtable(a, &cfg, seed),
        Command::Forecast(a) => cmd_forecast(a, &cfg, seed),
        Command::Murphy(a) => cmd_murphy(a, &cfg),
    }
}

fn level(flag: Option<f64>, cfg: &ConfigFile, default: f64) -> Result<ProbabilityLevel, CliError> {
    let a = pick(flag, cfg, "alpha", default)?;
    ProbabilityLevel::new(a).map_err(|e| CliError::input(e.to_string()))
}

fn family(model: &ModelArgs, cfg: &ConfigFile) -> Result<SpecificationFamily, CliError> {
    let g2: G2Kind = pick_str(&model.family, cfg, "family", "neg-log").parse().map_err(CliError::from)?;
    let g1: G1Kind = pick_str(&model.g1, cfg, "g1", "zero").parse().map_err(CliError::from)?;
    Ok(SpecificationFamily::new(g1, g2))
}

fn families(list: &str) -> Result<Vec<SpecificationFamily>, CliError> {
    if list.trim() == "all" {
        return Ok(G2Kind::ALL.iter().map(|g| SpecificationFamily::with_g2(*g)).collect());
    }
    parse_list(list, |s| s.parse::<G2Kind>().map(SpecificationFamily::with_g2).map_err(CliError::from))
}

fn dgps(list: &str) -> Result<Vec<DgpKind>, CliError> {
    parse_list(list, |s| s.parse::<DgpKind>().map_err(CliError::from))
}

fn translate(flag: &Option<String>, cfg: &ConfigFile) -> Result<Option<bool>, CliError> {
    match pick_str(flag, cfg, "translate", "auto").as_str() {
        "auto" => Ok(None),
        "on" => Ok(Some(true)),
        "off" => Ok(Some(false)),
        other => Err(CliError::input(format!("--translate must be auto, on or off, got '{other}'"))),
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect())).collect())
}

fn vec_json(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

fn estimator_name(e: Estimator) -> &'static str {
    match e {
        Estimator::M => "m",
        Estimator::Z => "z",
    }
}

fn fit_json(fam: SpecificationFamily, alpha: ProbabilityLevel, n: usize, names: &[String], f: &FitResult) -> Value {
    json!({
        "alpha": alpha.value(),
        "family": fam.g2.name(),
        "g1": match fam.g1 { G1Kind::Zero => "zero", G1Kind::Linear => "linear" },
        "estimator": estimator_name(f.estimator),
        "n": n,
        "regressors": names,
        "theta_q": vec_json(&f.theta.theta_q),
        "theta_e": vec_json(&f.theta.theta_e),
        "diagnostics": {
            "avg_loss": num(f.avg_loss),
            "ils_iterations": f.ils_iterations,
            "translation_offset": num(f.translation_offset),
            "converged": f.converged,
            "psi_norm_at_solution": num(f.psi_norm_at_solution),
        },
    })
}

fn cov_method_json(c: &CovOptions) -> Value {
    if c.bootstrap_reps > 0 {
        return json!({ "kind": "bootstrap", "replicates": c.bootstrap_reps });
    }
    json!({
        "kind": "sandwich",
        "density": match c.density { DensityMethod::Iid => "iid", DensityMethod::Nid => "nid" },
        "truncvar": match c.truncvar {
            TruncVarMethod::Ind => "ind",
            TruncVarMethod::SclN => "scl-n",
            TruncVarMethod::SclSp => "scl-sp",
        },
    })
}

fn cmd_fit(a: &FitArgs, cfg: &ConfigFile, seed: u64) -> Result<String, CliError> {
    let alpha = level(a.model.alpha, cfg, 0.025)?;
    let fam = family(&a.model, cfg)?;
    let estimator = match pick_str(&a.estimator, cfg, "estimator", "m").as_str() {
        "m" => Estimator::M,
        "z" => {
            eprintln!("warning: the Z-estimator is numerically unstable and diverges in many setups");
            Estimator::Z
        }
        other => return Err(CliError::input(format!("--estimator must be m or z, got '{other}'"))),
    };
    let density = match pick_str(&a.cov_density, cfg, "cov-density", "iid").as_str() {
        "iid" => DensityMethod::Iid,
        "nid" => DensityMethod::Nid,
        other => return Err(CliError::input(format!("--cov-density must be iid or nid, got '{other}'"))),
    };
    let truncvar = match pick_str(&a.cov_truncvar, cfg, "cov-truncvar", "ind").as_str() {
        "ind" => TruncVarMethod::Ind,
        "scl-n" => TruncVarMethod::SclN,
        "scl-sp" => TruncVarMethod::SclSp,
        other => return Err(CliError::input(format!("--cov-truncvar must be ind, scl-n or scl-sp, got '{other}'"))),
    };
    let bootstrap = pick(a.bootstrap, cfg, "bootstrap", 0usize)?;
    let no_intercept = a.no_intercept || cfg.flag("no-intercept")?;
    let opts = FitOptions { rng_seed: seed, translate: translate(&a.translate, cfg)?, estimator, ..FitOptions::default() };

    let (header, rows) = io::read_numeric(&a.input)?;
    if header.len() < 2 && no_intercept {
        return Err(CliError::input("--no-intercept needs at least one regressor column"));
    }
    let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let n = rows.len();
    let mut names: Vec<String> = Vec::new();
    if !no_intercept {
        names.push("(intercept)".into());
    }
    names.extend(header[1..].iter().cloned());
    let k = names.len();
    let offset = usize::from(!no_intercept);
    let x = DMatrix::from_fn(n, k, |i, j| if j < offset { 1.0 } else { rows[i][j + 1 - offset] });
    let sample = if no_intercept { RegressionSample::with_design(y, x)? } else { RegressionSample::new(y, x)? };

    let result = fit(fam, alpha, &sample, &opts).map_err(CliError::fit)?;
    let mut out = fit_json(fam, alpha, n, &names, &result);

    // The non-negative loss evaluates Gcal2 at y itself, which the neg-log
    // and neg-inverse families cannot do for y >= 0.
    let r2 = if sample.has_intercept() && k > 1 {
        RegressionSample::intercept_only(sample.y().to_vec())
            .and_then(|ones| fit(fam, alpha, &ones, &opts))
            .and_then(|r0| pseudo_r2(fam, alpha, &sample, &result.theta, &r0.theta))
            .map_err(|e| e.to_string())
    } else {
        Err("no regressors beyond the intercept".to_string())
    };
    match r2 {
        Ok(v) => {
            out["pseudo_r2"] = num(v);
            out["pseudo_r2_error"] = Value::Null;
        }
        Err(msg) => {
            out["pseudo_r2"] = Value::Null;
            out["pseudo_r2_error"] = json!(msg);
        }
    }

    let cov_opts = CovOptions { density, truncvar, bootstrap_reps: bootstrap, rng_seed: seed, ..CovOptions::default() };
    let cov: Result<CovarianceEstimate, _> = if bootstrap > 0 {
        bootstrap_covariance(&sample, fam, alpha, &opts, bootstrap, seed)
    } else {
        sandwich(&result, &sample, fam, alpha, &cov_opts)
    };
    out["covariance_method"] = cov_method_json(&cov_opts);
    out["metadata"] = metadata();
    let cov_err = match cov {
        Ok(c) => {
            out["covariance"] = matrix_json(&c.matrix);
            out["standard_errors"] = vec_json(&c.standard_errors());
            out["covariance_error"] = Value::Null;
            None
        }
        Err(e) => {
            out["covariance"] = Value::Null;
            out["standard_errors"] = Value::Null;
            out["covariance_error"] = json!(e.to_string());
            Some(e.to_string())
        }
    };
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out).expect("serializable")),
    }
    if let Some(msg) = cov_err {
        return Err(CliError { kind: ErrorKind::Covariance, message: format!("covariance failed: {msg}") });
    }
    let summary = format!(
        "fit {} alpha={} n={} k={} loss={:.6} converged={}",
        fam.g2.name(),
        alpha.value(),
        n,
        k,
        result.avg_loss,
        result.converged
    );
    // With JSON on stdout the summary goes to stderr to keep stdout parseable.
    if a.out.is_none() {
        eprintln!("{summary}");
        return Ok(String::new());
    }
    Ok(summary)
}

fn cmd_simulate(a: &SimulateArgs, cfg: &ConfigFile, seed: u64) -> Result<String, CliError> {
    let alpha = level(a.alpha, cfg, 0.025)?;
    let kinds = dgps(&pick_str(&a.dgp, cfg, "dgp", "1"))?;
    let ns = parse_list(&pick_str(&a.n, cfg, "n", "250,1000,2000"), parse_count)?;
    let fams = families(&pick_str(&a.families, cfg, "families", "all"))?;
    let reps = pick(a.reps, cfg, "reps", 1000usize)?;
    let bootstrap = pick(a.bootstrap, cfg, "bootstrap", 0usize)?;
    let study = pick_str(&a.study, cfg, "study", "mse");
    let sc = StudyConfig::new(alpha, reps, seed);

    let (header, rows, cells): (Vec<&str>, Vec<Vec<String>>, Value) = match study.as_str() {
        "mse" => {
            let rep = mc_mse_study(&kinds, &fams, &ns, &sc)?;
            let rows = rep
                .mse
                .iter()
                .map(|c| {
                    vec![c.dgp.name().into(), c.family.clone(), c.n.to_string(), fmt_num(c.mse), c.failures.to_string(), c.reps.to_string()]
                })
                .collect();
            let cells = rep
                .mse
                .iter()
                .map(|c| json!({"dgp": c.dgp.name(), "family": c.family, "n": c.n, "mse": num(c.mse), "failures": c.failures, "reps": c.reps}))
                .collect();
            (vec!["dgp", "family", "n", "mse", "failures", "reps"], rows, Value::Array(cells))
        }
        "covariance" => {
            let rep = covariance_benchmark(&kinds, &fams, &ns, &sc, bootstrap)?;
            let rows = rep
                .covariance
                .iter()
                .map(|c| {
                    vec![
                        c.dgp.name().into(),
                        c.family.clone(),
                        c.n.to_string(),
                        c.estimator.name().into(),
                        fmt_num(c.mean_frobenius),
                        c.failures.to_string(),
                        c.reps.to_string(),
                    ]
                })
                .collect();
            let cells = rep
                .covariance
                .iter()
                .map(|c| {
                    json!({"dgp": c.dgp.name(), "family": c.family, "n": c.n, "estimator": c.estimator.name(),
                           "mean_frobenius": num(c.mean_frobenius), "failures": c.failures, "reps": c.reps})
                })
                .collect();
            (vec!["dgp", "family", "n", "estimator", "mean_frobenius", "failures", "reps"], rows, Value::Array(cells))
        }
        other => return Err(CliError::input(format!("--study must be mse or covariance, got '{other}'"))),
    };
    let count = rows.len();
    write_csv(&with_suffix(&a.out, ".csv"), &header, &rows)?;
    let doc = json!({
        "study": study,
        "alpha": alpha.value(),
        "reps": reps,
        "seed": seed,
        "bootstrap": bootstrap,
        "cells": cells,
        "metadata": metadata(),
    });
    write_json(&with_suffix(&a.out, ".json"), &doc)?;
    Ok(format!("simulate {study}: {count} cells, {reps} replications, seed {seed}"))
}

fn cmd_covtable(a: &CovtableArgs, cfg: &ConfigFile, seed: u64) -> Result<String, CliError> {
    let alpha = level(a.alpha, cfg, 0.025)?;
    let kind: DgpKind = pick_str(&a.dgp, cfg, "dgp", "1").parse()?;
    let mc_n = parse_count(&pick_str(&a.mc_n, cfg, "mc-n", "1e7"))?;
    let fams: Vec<SpecificationFamily> = G2Kind::ALL.iter().map(|g| SpecificationFamily::with_g2(*g)).collect();
    let table = covariance_table(kind, alpha, &fams, mc_n, seed)?;
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let rows: Vec<Vec<String>> = table.iter().map(|r| vec![r.family.clone(), fmt_num(r.q), opt(r.es), opt(r.full)]).collect();
    write_csv(&with_suffix(&a.out, ".csv"), &["family", "q", "es", "full"], &rows)?;
    let jrows: Vec<Value> = table
        .iter()
        .map(|r| json!({"family": r.family, "q": num(r.q), "es": r.es.map(num), "full": r.full.map(num)}))
        .collect();
    let doc = json!({
        "dgp": kind.name(),
        "alpha": alpha.value(),
        "mc_n": mc_n,
        "seed": seed,
        "rows": jrows,
        "metadata": metadata(),
    });
    write_json(&with_suffix(&a.out, ".json"), &doc)?;
    let neglog = table.iter().find(|r| r.family == "neg-log").and_then(|r| r.full).unwrap_or(f64::NAN);
    Ok(format!("covtable {}: mc_n={mc_n}, neg-log full norm {neglog:.3}", kind.name()))
}

fn track_rows(t: &ForecastTrack) -> Vec<Vec<String>> {
    t.days.iter().map(|d| vec![d.date.clone(), fmt_num(d.var), fmt_num(d.es), fmt_num(d.realized)]).collect()
}

fn cmd_forecast(a: &ForecastArgs, cfg: &ConfigFile, seed: u64) -> Result<String, CliError> {
    let alpha = level(a.model.alpha, cfg, 0.025)?;
    let fam = family(&a.model, cfg)?;
    let window = pick(a.window, cfg, "window", 1000usize)?;
    let hs_window = pick(a.hs_window, cfg, "hs-window", 250usize)?;
    let series = match (&a.input, &a.intraday, a.synthetic) {
        (Some(p), None, None) => io::read_daily(p)?,
        (None, Some(p), None) => io::read_intraday(p)?,
        (None, None, Some(days)) => ForecastModel::default().simulate(days, seed)?,
        _ => return Err(CliError::input("give exactly one of --input, --intraday or --synthetic")),
    };
    let opts = FitOptions { rng_seed: seed, translate: translate(&a.translate, cfg)?, ..FitOptions::default() };
    let joint = rolling_joint_forecast(&series, alpha, window, fam, &opts)?;
    let hs = historical_simulation(&series, alpha, hs_window)?;
    let aligned = align_tracks(&[joint.clone(), hs.clone()]);
    let mut summaries = Vec::new();
    for t in &aligned {
        let path = with_suffix(&a.out, &format!("_{}.csv", t.label));
        write_csv(&path, &["date", "var", "es", "realized"], &track_rows(t))?;
        let violations = t.ordering_violations();
        let hits = t.days.iter().filter(|d| d.realized <= d.var).count();
        summaries.push(json!({
            "label": t.label,
            "file": path.file_name().map(|s| s.to_string_lossy().into_owned()),
            "days": t.days.len(),
            "var_hit_rate": num(if t.days.is_empty() { f64::NAN } else { hits as f64 / t.days.len() as f64 }),
            "ordering_violations": violations,
        }));
    }
    let doc = json!({
        "alpha": alpha.value(),
        "family": fam.g2.name(),
        "window": window,
        "hs_window": hs_window,
        "series_days": series.len(),
        "gaps": joint.gaps,
        "tracks": summaries,
        "metadata": metadata(),
    });
    write_json(&with_suffix(&a.out, ".json"), &doc)?;
    Ok(format!(
        "forecast: {} aligned days, {} failed windows, tracks {} and {}",
        aligned[0].days.len(),
        joint.gaps.len(),
        joint.label,
        hs.label
    ))
}

fn cmd_murphy(a: &MurphyArgs, cfg: &ConfigFile) -> Result<String, CliError> {
    let alpha = level(a.alpha, cfg, 0.025)?;
    let points = pick(a.points, cfg, "points", 100usize)?;
    let base: G2Kind = pick_str(&a.base, cfg, "base", "logistic-log").parse()?;
    let ta = io::read_track(&a.track_a)?;
    let tb = io::read_track(&a.track_b)?;
    let aligned = align_tracks(&[ta, tb]);
    let family = ScoreFamily::HomogeneousGrid { base };
    let curve = murphy_diagram(&aligned[0], &aligned[1], alpha, &MurphyGrid::Auto { points }, &family)?;
    let verdict = dominance_verdict(&curve);
    let rows: Vec<Vec<String>> = (0..curve.thresholds.len())
        .map(|i| vec![fmt_num(curve.thresholds[i]), fmt_num(curve.mean_diff[i]), fmt_num(curve.band_halfwidth[i])])
        .collect();
    write_csv(&with_suffix(&a.out, ".csv"), &["threshold", "mean_diff", "band"], &rows)?;
    let vname = match verdict {
        Verdict::ADominates => "a-dominates",
        Verdict::BDominates => "b-dominates",
        Verdict::Inconclusive => "inconclusive",
    };
    let label = |p: &Path| p.display().to_string();
    let doc = json!({
        "alpha": alpha.value(),
        "base": base.name(),
        "track_a": label(&a.track_a),
        "track_b": label(&a.track_b),
        "days": aligned[0].days.len(),
        "verdict": vname,
        "thresholds": vec_json(&curve.thresholds),
        "mean_diff": vec_json(&curve.mean_diff),
        "band": vec_json(&curve.band_halfwidth),
        "metadata": metadata(),
    });
    write_json(&with_suffix(&a.out, ".json"), &doc)?;
    Ok(format!("murphy: {} days, {} thresholds, verdict {vname}", aligned[0].days.len(), curve.thresholds.len()))
}
