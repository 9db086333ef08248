//! `failband` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use failband::error::ErrorClass;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "failband",
    version,
    about = "Runtime failure detection for chunked-action robot policies"
)]
struct Cli {
    /// Flat TOML file with default values for any option below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for all randomness; falls back to the config file, then FAILBAND_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled rollout dataset from the synthetic environment.
    Simulate(SimulateArgs),
    /// Fit a score model on the successful rollouts of a dataset.
    TrainScore(TrainArgs),
    /// Build a threshold band from successful calibration rollouts.
    Calibrate(CalibrateArgs),
    /// Score test rollouts step by step and flag failures.
    Detect(DetectArgs),
    /// Compute detection metrics for a results file.
    Evaluate(EvaluateArgs),
    /// Recalibrate over a grid of alpha values and report metrics for each.
    SweepAlpha(SweepArgs),
    /// Write per-rollout score series.
    Score(ScoreArgs),
    /// Measure per-step scoring latency and append it to a CSV report.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_rollouts: Option<usize>,
    /// Maximum number of execution steps per rollout.
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Action chunk length H.
    #[arg(long)]
    pub h: Option<usize>,
    /// Executed actions per chunk H'.
    #[arg(long)]
    pub h_prime: Option<usize>,
    /// Observation window T_O.
    #[arg(long)]
    pub t_o: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub obs_noise: Option<f64>,
    #[arg(long)]
    pub d_feature: Option<usize>,
    /// Failure injections as `mode:probability[:param]`, comma separated.
    #[arg(long)]
    pub failures: Option<String>,
    #[arg(long)]
    pub success_eps: Option<f64>,
    /// Index of the first rollout, for disjoint splits under one seed.
    #[arg(long)]
    pub first_index: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub method: Option<String>,
    /// Training dataset; failed rollouts are skipped.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// RND embedding size.
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// CFM consistency loss weight.
    #[arg(long)]
    pub consistency_weight: Option<f64>,
    /// Number of k-means clusters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fixed number of PCA components.
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub variance_target: Option<f64>,
}

/// Which scorer to use: a trained model file, or a parameter-free method.
#[derive(Debug, Args, Clone)]
pub struct ScorerArgs {
    /// Score method; read from the model manifest when omitted.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// STAC policy samples per step.
    #[arg(long)]
    pub stac_batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Calibration dataset of successful rollouts.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Band modulation: `v1` (constant) or `v2` (max deviation).
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Drop non-successful rollouts instead of rejecting the dataset.
    #[arg(long)]
    pub allow_mixed: bool,
    /// STAC decision rule: `cumulative` (default) or `band`.
    #[arg(long)]
    pub stac_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub band: PathBuf,
    /// Test dataset.
    #[arg(long, conflicts_with = "stream", required_unless_present = "stream")]
    pub data: Option<PathBuf>,
    /// Step stream: a dataset header line, then one step record per line; `-` reads stdin.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// One detection result per rollout, as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step score log, as JSON lines.
    #[arg(long)]
    pub step_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Dataset providing the ground-truth labels.
    #[arg(long)]
    pub labels: PathBuf,
    /// Band used for detection; supplies alpha and method.
    #[arg(long)]
    pub band: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub setting: Option<String>,
    /// Report file; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Calibration dataset.
    #[arg(long)]
    pub cal: PathBuf,
    /// Test dataset.
    #[arg(long)]
    pub test: PathBuf,
    /// Alpha values, comma separated; defaults to 0.01, 0.02, ..., 0.1.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub allow_mixed: bool,
    #[arg(long)]
    pub stac_mode: Option<String>,
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Score series, as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Timed passes over the dataset after one warm-up pass.
    #[arg(long)]
    pub reps: Option<usize>,
    /// CSV report; a row is appended per run.
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> failband::Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let seed = cfg.seed(cli.seed)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, seed, a),
        Command::TrainScore(a) => commands::train_score(&cfg, seed, a),
        Command::Calibrate(a) => commands::calibrate(&cfg, seed, a),
        Command::Detect(a) => commands::detect(&cfg, seed, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::SweepAlpha(a) => commands::sweep_alpha(&cfg, seed, a),
        Command::Score(a) => commands::score(&cfg, seed, a),
        Command::Bench(a) => commands::bench(&cfg, seed, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
