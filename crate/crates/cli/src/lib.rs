//! Command-line front end for SALMoE fitting, selection, prediction,
//! clustering, simulation and bootstrap intervals.

pub mod commands;
pub mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

/// Exit status of a successful command run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

impl From<Outcome> for ExitCode {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Success => ExitCode::SUCCESS,
            Outcome::NotConverged => ExitCode::from(2),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "salmoe",
    version,
    about = "Shifted asymmetric Laplace mixture-of-experts regression"
)]
pub struct Cli {
    /// Worker threads for restarts, sweeps and replications (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a K-component model.
    Fit(FitArgs),
    /// Predictive mean, variance and interval for new covariates.
    Predict(PredictArgs),
    /// MAP labels and responsibilities under a fitted model.
    Cluster(ClusterArgs),
    /// Fit a range of K and tabulate BIC, ICL and PanIC.
    Select(SelectArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
    /// Percentile bootstrap intervals for a fitted model.
    Bootstrap(BootstrapArgs),
}

/// Data file and column roles.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Response column.
    #[arg(long)]
    pub y: String,
    /// Expert covariate columns (comma separated; an intercept is added).
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Gating covariate columns (default: the expert covariates).
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<String>>,
    /// Standardize the response and covariates before fitting.
    #[arg(long)]
    pub standardize: bool,
}

/// Fitting controls.
#[derive(Debug, Clone, Args)]
pub struct FitControl {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random initializations screened per fit.
    #[arg(long, default_value_t = 30)]
    pub restarts: usize,
    /// Relative log-likelihood tolerance.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

impl FitControl {
    pub fn config(&self, k: usize) -> salmoe::FitConfig {
        salmoe::FitConfig {
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            ..salmoe::FitConfig::new(k)
                .with_seed(self.seed)
                .with_restarts(self.restarts)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of components.
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub control: FitControl,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// A fitted model and its report (column roles and transform).
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// model.json written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// report.json written by `fit` (default: next to the model).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// CSV with the covariate columns.
    #[arg(long)]
    pub input: PathBuf,
    /// Expert covariate columns (default: from the report).
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Gating covariate columns (default: from the report, else the expert covariates).
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// Response column (default: from the report).
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<String>>,
    /// Column of reference labels (1-based) to score the MAP labels against.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidate orders: `1..4`, `2-5` or `1,2,3`.
    #[arg(long = "k-range", conflicts_with = "k")]
    pub k_range: Option<String>,
    /// A single candidate order.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = salmoe::select::DEFAULT_PANIC_BETA)]
    pub panic_beta: u32,
    #[arg(long, default_value_t = salmoe::select::DEFAULT_PANIC_NU)]
    pub panic_nu: f64,
    #[command(flatten)]
    pub control: FitControl,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario name, e.g. estimation-1, robust-1, cluster-d, order-S1.
    pub scenario: String,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample size override for single-size scenarios.
    #[arg(long)]
    pub n: Option<usize>,
    /// Sample sizes for estimation scenarios (comma separated).
    #[arg(long = "sample-sizes", value_delimiter = ',')]
    pub sample_sizes: Option<Vec<usize>>,
    /// Restarts per fit (default: the fitter's default).
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// The data the model was fitted to.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of bootstrap replicates (at least 50).
    #[arg(long = "B", default_value_t = 200)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `1..4`, `1..=4`, `2-5` or `1,2,3`.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    let bounds = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .or_else(|| s.split_once('-'));
    let ks: Vec<usize> = match bounds {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
            (a..=b).collect()
        }
        None => s
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<std::result::Result<_, _>>()?,
    };
    if ks.is_empty() || ks.contains(&0) {
        bail!("K range '{s}' must list orders >= 1");
    }
    Ok(ks)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Select(a) => commands::select(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Bootstrap(a) => commands::bootstrap(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_range_forms() {
        assert_eq!(parse_k_range("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_k_range("2-3").unwrap(), vec![2, 3]);
        assert_eq!(parse_k_range("1,3").unwrap(), vec![1, 3]);
        assert_eq!(parse_k_range("2..=2").unwrap(), vec![2]);
        assert!(parse_k_range("0..2").is_err());
        assert!(parse_k_range("a").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
