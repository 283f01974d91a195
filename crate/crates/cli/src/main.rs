//! `esreg` command-line front end.

mod commands;
mod config;
mod io;
mod report;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "esreg", version, about = "Joint quantile (VaR) and Expected Shortfall regression")]
pub struct Cli {
    /// Flat key=value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the joint regression to a CSV file (response first, then regressors).
    Fit(FitArgs),
    /// Monte-Carlo study: parameter MSE or covariance-estimator accuracy.
    Simulate(SimulateArgs),
    /// Norms of the true asymptotic covariance for every family.
    Covtable(CovtableArgs),
    /// Rolling one-step-ahead VaR/ES forecasts.
    Forecast(ForecastArgs),
    /// Murphy diagram comparing two forecast tracks.
    Murphy(MurphyArgs),
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// neg-inverse | neg-log | neg-sqrt | logistic-log | exp
    #[arg(long)]
    pub family: Option<String>,
    /// zero | linear
    #[arg(long)]
    pub g1: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input CSV with a header row.
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// m | z
    #[arg(long)]
    pub estimator: Option<String>,
    /// iid | nid
    #[arg(long)]
    pub cov_density: Option<String>,
    /// ind | scl-n | scl-sp
    #[arg(long)]
    pub cov_truncvar: Option<String>,
    /// Bootstrap replicates (0 uses the plug-in sandwich).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Do not prepend an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// auto | on | off
    #[arg(long)]
    pub translate: Option<String>,
    /// Output JSON path (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// mse | covariance
    #[arg(long)]
    pub study: Option<String>,
    /// Comma-separated designs: 1, 2, 3.
    #[arg(long)]
    pub dgp: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    pub n: Option<String>,
    /// Comma-separated families or "all".
    #[arg(long)]
    pub families: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Bootstrap replicates per sample in the covariance study (0 disables).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CovtableArgs {
    /// Design: 1, 2 or 3.
    #[arg(long)]
    pub dgp: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte-Carlo draws, e.g. 1e7.
    #[arg(long)]
    pub mc_n: Option<String>,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Daily CSV with columns date, return, rv.
    #[arg(long, conflicts_with = "intraday")]
    pub input: Option<PathBuf>,
    /// Intraday CSV with columns date, return.
    #[arg(long)]
    pub intraday: Option<PathBuf>,
    /// Simulate a stand-in daily series of this many days instead of reading one.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Estimation window for the regression forecasts.
    #[arg(long)]
    pub window: Option<usize>,
    /// Window of the historical-simulation baseline.
    #[arg(long)]
    pub hs_window: Option<usize>,
    /// auto | on | off
    #[arg(long)]
    pub translate: Option<String>,
    /// Output prefix; writes PREFIX_<label>.csv per track and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MurphyArgs {
    /// Forecast CSV (date, var, es, realized) of the first track.
    pub track_a: PathBuf,
    /// Forecast CSV of the second track.
    pub track_b: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of thresholds in the automatic grid.
    #[arg(long)]
    pub points: Option<usize>,
    /// Family translated across the grid (default logistic-log).
    #[arg(long)]
    pub base: Option<String>,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            err.emit();
            ExitCode::from(err.exit_code())
        }
    }
}
