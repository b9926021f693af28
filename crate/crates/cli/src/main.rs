//! `seqimit`: train, evaluate and analyse sequence imitation policies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod analyze;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqimit_core::parallel::Execution;

#[derive(Parser)]
#[command(name = "seqimit", version, about = "Sequence imitation learning with MLE, IQLearn and GAIL")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,

    /// Run rollouts and evaluation on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per configured seed.
    Train(TrainArgs),
    /// Decode from a checkpoint at several temperatures and report quality and diversity.
    Eval(EvalArgs),
    /// Train once per value of one config key and merge the histories.
    Sweep(SweepArgs),
    /// Compare offline and online IQLearn on the toy chain MDP.
    ToyMdp(ToyArgs),
    /// Spearman correlation between implicit-reward returns and task metrics.
    Correlate(CorrelateArgs),
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Experiment config (`key = value` lines). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Train on this dataset file instead of generating one from the task.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sample,
    Greedy,
    Beam,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Task settings come from this config and `--set` overrides.
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Sampling temperatures, one output row each.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub temps: Vec<f64>,

    #[arg(long, value_enum, default_value = "sample")]
    pub mode: ModeArg,

    #[arg(long, default_value_t = 4)]
    pub beam_size: usize,

    #[arg(long, default_value_t = 0.6)]
    pub length_penalty: f64,

    /// Number of validation prompts.
    #[arg(long, default_value_t = 64)]
    pub prompts: usize,

    #[arg(long, default_value_t = 4)]
    pub samples_per_prompt: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Write `eval.csv` and `report.json` here instead of printing CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Axis as `key=v1,v2,...`, e.g. `lambda=0,0.05,0.1,0.5,1.0`.
    #[arg(long)]
    pub axis: String,

    /// Parent directory; each value gets its own `key=value` run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToyExecArg {
    Greedy,
    Sample,
}

#[derive(Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,

    /// Number of seeds (0..N).
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,

    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,

    #[arg(long, default_value_t = 200)]
    pub steps: usize,

    #[arg(long, default_value_t = 5)]
    pub chain_length: usize,

    #[arg(long, default_value_t = 20)]
    pub horizon: usize,

    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,

    #[arg(long, default_value_t = 10)]
    pub demonstrations: usize,

    /// How trained tables act during evaluation.
    #[arg(long, value_enum, default_value = "greedy")]
    pub execution: ToyExecArg,

    /// Write `toy.csv` and `report.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Task settings and `lambda`/`gamma` for reward extraction.
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Metrics to correlate against: `task-metric`, `total-return`, `length`.
    #[arg(long, value_delimiter = ',', default_value = "task-metric")]
    pub metrics: Vec<String>,

    #[arg(long, default_value_t = 200)]
    pub prompts: usize,

    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Write `report.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure caused by bad input rather than by the run itself (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<seqimit_core::Error>() {
        Some(seqimit_core::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::Train(a) => run::cmd_train(&a, exec),
        Command::Eval(a) => analyze::cmd_eval(&a, exec),
        Command::Sweep(a) => run::cmd_sweep(&a, exec),
        Command::ToyMdp(a) => analyze::cmd_toy(&a, exec),
        Command::Correlate(a) => analyze::cmd_correlate(&a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
