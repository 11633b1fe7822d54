//! Command-line entry point: dataset generation, experiment runs, and
//! report/plot emission.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "headcount", version, about = "Annotation-budget experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic annotation datasets (train/dev/test JSONL)
    GenData(GenDataArgs),
    /// Run one experiment arm and persist its artifacts
    Run(RunArgs),
    /// Combine finished runs into a comparison CSV and learning curves
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// dense6 (6 annotators, everyone annotates), sparse18 (18 annotators,
    /// 3 per instance), or custom
    #[arg(long, default_value = "dense6")]
    pub profile: String,
    /// Training instances to generate
    #[arg(long, default_value_t = 1000)]
    pub n_instances: usize,
    /// Dev instances (default: n-instances / 8, at least 1)
    #[arg(long)]
    pub n_dev: Option<usize>,
    /// Test instances (default: n-instances / 8, at least 1)
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Annotator count for the custom profile
    #[arg(long, default_value_t = 6)]
    pub annotators: usize,
    /// Annotators per instance for the custom profile; 0 means everyone
    #[arg(long, default_value_t = 0)]
    pub per_instance: usize,
    /// Raw positive rate of the latent score model
    #[arg(long, default_value_t = 0.15)]
    pub positive_rate: f64,
    /// Spread of per-annotator decision thresholds
    #[arg(long, default_value_t = 0.1)]
    pub bias_spread: f64,
    /// Lower bound of per-annotator noise sigma
    #[arg(long, default_value_t = 0.05)]
    pub noise_min: f64,
    /// Upper bound of per-annotator noise sigma
    #[arg(long, default_value_t = 0.25)]
    pub noise_max: f64,
}

#[derive(Args)]
pub struct RunArgs {
    /// TOML experiment config; built-in defaults apply when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. --set acquisition.method=vote
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for --set acquisition.method=...
    #[arg(long)]
    pub method: Option<String>,
    /// Shorthand for --set acquisition.policy=...
    #[arg(long)]
    pub policy: Option<String>,
    /// Shorthand for --set model.kind=...
    #[arg(long)]
    pub model_kind: Option<String>,
    /// Shorthand for --set al.rounds=...
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Shorthand for --set al.seed_budget=...
    #[arg(long)]
    pub seed_budget: Option<usize>,
    /// Shorthand for --set al.round_budget=...
    #[arg(long)]
    pub round_budget: Option<usize>,
    /// Comma-separated replication seeds, e.g. 0,1,2,3
    #[arg(long)]
    pub seeds: Option<String>,
    /// Shorthand for --set train.peak_lr=...
    #[arg(long)]
    pub peak_lr: Option<f64>,
    /// Results root (default: $HEADCOUNT_RESULTS_DIR, else ./results)
    #[arg(long)]
    pub results_dir: Option<PathBuf>,
    /// Replace an existing results directory for the same config
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Finished run directories, each holding a manifest.json
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
}

/// Command failure carrying its exit-code class.
pub enum Failure {
    Validation(String),
    Runtime(String),
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let outcome = match cli.cmd {
        Cmd::GenData(args) => commands::gen_data(args),
        Cmd::Run(args) => commands::run(args),
        Cmd::Report(args) => commands::report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
