mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use markov_progression::exec::Parallelism;
use markov_progression::Error;
use serde::Serialize;

/// Fit, bootstrap, predict and simulate discrete-time Markov progression models.
#[derive(Debug, Parser)]
#[command(name = "mprog", version)]
struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 runs sequentially, 0 or unset uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transition counts and observation-pattern histograms.
    Summarize(SummarizeArgs),
    /// Composite-likelihood fit of every origin block.
    Fit(FitArgs),
    /// Percentile bootstrap confidence intervals.
    Ci(CiArgs),
    /// State-occupancy probabilities on a day grid.
    PredictOccupancy(PredictArgs),
    /// Generate a two-state dataset with practice and patient effects.
    Simulate(SimulateArgs),
    /// Bias and coverage over repeated simulated datasets.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Visit records CSV.
    #[arg(long)]
    input: PathBuf,

    /// Model specification JSON, or `simulation` for the two-state simulator design.
    #[arg(long)]
    spec: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SummarizeArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Bin width in days for follow-up and gap-time histograms.
    #[arg(long, default_value_t = 30.0)]
    bin_days: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, default_value_t = 1e-8)]
    grad_tol: f64,

    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Direct,
    Efb,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CiArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Fit produced by `fit`; refitted from the input when absent.
    #[arg(long)]
    fit: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,

    #[arg(long, default_value_t = 1000)]
    replicates: usize,

    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct PredictArgs {
    /// Fit produced by `fit`.
    #[arg(long)]
    fit: PathBuf,

    /// JSON object of covariate values, e.g. {"dose": "high"}.
    #[arg(long)]
    covariates: Option<PathBuf>,

    #[arg(long, default_value_t = 1)]
    course: u32,

    /// Days between grid points (the assumed visit spacing).
    #[arg(long, default_value_t = 61)]
    step: u32,

    #[arg(long, default_value_t = 366)]
    horizon: u32,

    #[arg(long, default_value_t = 1)]
    initial_state: u32,

    /// Bootstrap replicates written by `ci`, for pointwise bands.
    #[arg(long)]
    bands: Option<PathBuf>,

    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimArgs {
    /// Simulation configuration JSON; the reference design when absent.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Use the full-scale cluster sizes.
    #[arg(long)]
    full: bool,

    #[arg(long)]
    practices: Option<u32>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,

    /// Correlation of the patient-level intercepts.
    #[arg(long)]
    rho: Option<f64>,

    #[arg(long, default_value = "data.csv")]
    out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TruthArg {
    /// Deterministic population limit by quadrature.
    Quadrature,
    /// Marginal fit to one inflated simulated population.
    Simulate,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CoverageArgs {
    #[command(flatten)]
    sim: SimArgs,

    /// Comma-separated patient-effect correlations.
    #[arg(long, value_delimiter = ',', default_value = "0,0.6")]
    rho: Vec<f64>,

    #[arg(long, default_value_t = 200)]
    datasets: usize,

    #[arg(long, default_value_t = 400)]
    replicates: usize,

    #[arg(long, value_delimiter = ',', default_value = "direct,efb")]
    methods: Vec<String>,

    #[arg(long, default_value_t = 0.95)]
    level: f64,

    #[arg(long, value_enum, default_value_t = TruthArg::Quadrature)]
    truth: TruthArg,

    /// Inflation factor of the simulated truth population.
    #[arg(long, default_value_t = 32)]
    scale: u32,

    #[arg(long, default_value = "coverage.csv")]
    out: String,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NonConvergence { .. })
        | Some(Error::Separation { .. })
        | Some(Error::TooManyFailures { .. })
        | Some(Error::NonFiniteScore(_)) => 3,
        Some(Error::InvalidConfig(_)) | Some(Error::TooFewReplicates { .. }) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Parallelism::from_threads(cli.threads).install(|| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
