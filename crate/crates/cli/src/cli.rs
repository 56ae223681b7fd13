use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dpra", version, about = "Dynamic probabilistic risk assessment of hybrid systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file and print its diagnostics
    Validate(ValidateArgs),
    /// Generate the scenarios of a plan file from its FSM
    Plan(PlanArgs),
    /// Explore a model and write estimates, traces and a run manifest
    Explore(ExploreArgs),
    /// Summarize an exploration and apply acceptance thresholds
    Report(ReportArgs),
    /// Explore several designs and compare their risk
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    pub plan: PathBuf,
    /// Longest FSM path turned into a scenario
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Where to write the plan with its generated scenarios
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Systematic,
    Guided,
    Targeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimedArg {
    Sampled,
    Discretized,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    /// Model file (omit with --manifest)
    #[arg(required_unless_present = "manifest")]
    pub model: Option<PathBuf>,
    /// Repeat the run recorded in a manifest
    #[arg(long, conflicts_with_all = ["model", "mode", "plan", "plim", "n", "seed", "alpha", "beta", "gamma",
        "target_event", "boost", "max_depth", "max_rounds", "workers", "h", "timed"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Truncation limit on cumulative path probability
    #[arg(long)]
    pub plim: Option<f64>,
    /// Number of sequences (systematic) or stories (guided)
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `component=STATE`, `lost:func` or `gained:func`
    #[arg(long)]
    pub target_event: Option<String>,
    #[arg(long)]
    pub boost: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Integration step
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, value_enum)]
    pub timed: Option<TimedArg>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `explore`
    pub results: PathBuf,
    /// JSON object mapping severity class to a maximum probability or "none"
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Also write the report as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub config: PathBuf,
    /// Also write the comparison as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
