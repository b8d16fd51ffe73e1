//! `vcstar`: reproducible runs of preprocessing, online detection,
//! simulation, calibration, and reporting.
//!
//! Exit codes: 0 success, 1 runtime or statistical error, 2 usage error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use vcstar_core::simulation::Preset;
use vcstar_core::{ChangeKind, Method};

/// Failure caused by the invocation rather than the data.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(name = "vcstar", version, about = "Variance-component change-point detection for multivariate daily streams")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Global {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "vcstar-out")]
    out: PathBuf,
}

/// Everything a rerun needs besides the configuration snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub seed: Option<u64>,
    pub command: Command,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Segment, impute, and residualize a raw stream.
    Preprocess(PreprocessArgs),
    /// Online detection over preprocessed residual streams.
    Detect(DetectArgs),
    /// Power table over a preset or a scenario grid file.
    Simulate(SimulateArgs),
    /// Effect size giving the target VC* power for one scenario.
    Calibrate(CalibrateArgs),
    /// Shrinkage weight for a residual stream.
    SelectPhi(SelectPhiArgs),
    /// Null distribution of a detector's max statistic.
    NullDist(NullDistArgs),
    /// Summaries of detection logs.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Residual autocorrelation across ridge penalties.
    TuneLambda(TuneLambdaArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Detect(_) => "detect",
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::SelectPhi(_) => "select-phi",
            Command::NullDist(_) => "null-dist",
            Command::Report(ReportCommand::Similarity(_)) => "report similarity",
            Command::Report(ReportCommand::Rates(_)) => "report rates",
            Command::Report(ReportCommand::Spearman(_)) => "report spearman",
            Command::TuneLambda(_) => "tune-lambda",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    /// Raw stream (CSV or TSV; first column is the day).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub int_offset: Option<f64>,
    /// Transform each day from that day and earlier ones only.
    #[arg(long)]
    pub causal: bool,
    #[arg(long)]
    pub min_length: Option<usize>,
    #[arg(long)]
    pub max_gap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    /// Residual streams; each file stem is its stream id.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Null replicates per test.
    #[arg(long, value_parser = positive)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Directory of reusable null distributions.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub preset: Option<Preset>,
    /// Scenario table with a header naming ScenarioSpec fields.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Methods to evaluate; all by default.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    /// Change kinds for presets; all by default.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<ChangeKind>,
    /// Simulated panels per power estimate.
    #[arg(long, value_parser = positive)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub null_b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use each scenario's own effect instead of calibrating.
    #[arg(long)]
    pub no_calibrate: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub t: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 4)]
    pub k_star: usize,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value = "mean_only")]
    pub kind: ChangeKind,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 1.0)]
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = "vcstar")]
    pub method: Method,
    /// Search window; seven days or fewer for short panels by default.
    #[arg(long)]
    pub db: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub null_b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub target_power: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SelectPhiArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub db: usize,
    #[arg(long, default_value_t = 4)]
    pub k_star: usize,
    #[arg(long, default_value_t = 5)]
    pub max_iterations: usize,
    #[arg(long, value_parser = positive)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub null_b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NullDistArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long, default_value_t = 7)]
    pub db: usize,
    /// Null replicates.
    #[arg(long, value_parser = positive)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Permute the days of this panel; otherwise draw N(0, exchangeable).
    #[arg(long, conflicts_with_all = ["t", "p"])]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    pub t: Option<usize>,
    #[arg(long, required_unless_present = "input")]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
pub enum ReportCommand {
    /// Jaccard similarity of two detection logs.
    Similarity(SimilarityArgs),
    /// Detections per monitored day from a detect summary.
    Rates(RatesArgs),
    /// Spearman correlation with a bootstrap interval.
    Spearman(SpearmanArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RatesArgs {
    #[arg(long)]
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SpearmanArgs {
    /// Table with a header row.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub y: String,
    /// Bootstrap resamples.
    #[arg(long, value_parser = positive)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TuneLambdaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1,2.5,10,100,1000")]
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Rerun(args) = &cli.command {
        return commands::rerun(&args.manifest, &cli.global.out);
    }
    let config = config::Config::load(cli.global.config.as_deref())?;
    let invocation = Invocation {
        seed: cli.global.seed,
        command: cli.command,
    };
    commands::execute(&invocation, config, &cli.global.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
