//! `lstm-lrp`: generate data, train models, explain predictions, and run the
//! evaluation protocols.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::FileConfig;

/// Exit codes.
const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_MISSING_INPUT: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    MissingInput(PathBuf),
    Io(PathBuf, std::io::Error),
    Run(lstm_lrp::Error),
}

impl CliError {
    /// Read failure on an input file.
    pub fn input(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Io(path.to_path_buf(), e)
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(lstm_lrp::Error::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::MissingInput(_) => EXIT_MISSING_INPUT,
            CliError::Io(..) | CliError::Run(_) => EXIT_RUNTIME,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::MissingInput(_) => "missing_input",
            CliError::Io(..) => "io",
            CliError::Run(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        let msg = match self {
            CliError::Usage(m) | CliError::Config(m) => m.clone(),
            CliError::MissingInput(p) => format!("no such file: {}", p.display()),
            CliError::Io(p, e) => format!("{}: {e}", p.display()),
            CliError::Run(e) => e.to_string(),
        };
        msg.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

impl From<lstm_lrp::Error> for CliError {
    fn from(e: lstm_lrp::Error) -> Self {
        CliError::Run(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "lstm-lrp", version, about = "LSTM relevance propagation toolkit")]
struct Cli {
    /// TOML file with top-level `seed`, `out`, `threads` and one table per command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [env: LSTM_LRP_OUT] [default: lstm-lrp-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [default: available parallelism].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train, validation and test datasets as JSON lines.
    Gen(GenFlags),
    /// Train a model and save it with its loss history.
    Train(TrainFlags),
    /// Explain one prediction of a saved model.
    Explain(ExplainFlags),
    /// Report the relevance ledger of one LRP explanation.
    Audit(ExplainFlags),
    /// Evaluate the Taylor expansion of a gated product on a grid.
    DtdGrid(DtdFlags),
    /// Run an evaluation protocol.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Relevance correlations and mass on the arithmetic tasks.
    Fidelity(FidelityFlags),
    /// Accuracy under relevance-ordered deletion on the synthetic corpus.
    Selectivity(SelectivityFlags),
    /// Per-step reward redistribution on grid-world episodes.
    Redistribute(RedistributeFlags),
}

#[derive(Debug, Args, Serialize)]
struct GenFlags {
    /// addition, subtraction, gridworld or selectivity.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct TrainFlags {
    /// addition, subtraction, gridworld or selectivity.
    #[arg(long)]
    task: Option<String>,
    /// Directory holding train.jsonl and val.jsonl; generated from the task when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// standard, nondecreasing, markov or gateless.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct ExplainFlags {
    /// Model file written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON sequence (array of rows or an object with `sequence`), or a dataset file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Record to explain when the input is a dataset file.
    #[arg(long)]
    index: Option<usize>,
    /// lrp, gradient, gradient_x_input, occlusion_f_diff or occlusion_p_diff.
    #[arg(long)]
    explainer: Option<String>,
    /// Product rule for LRP: all, prop, abs or half.
    #[arg(long)]
    rule: Option<String>,
    /// Stabilizer of the linear maps [default: 0.001].
    #[arg(long)]
    eps: Option<f64>,
    /// Stabilizer of the product rule [default: 0.2 for prop, 0.001 otherwise].
    #[arg(long)]
    product_eps: Option<f64>,
    /// Output index to explain.
    #[arg(long)]
    target: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct DtdFlags {
    /// identity, relu or tanh.
    #[arg(long)]
    signal: Option<String>,
    /// Points per axis.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    z_g: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    z_s: Option<Vec<f64>>,
    /// Relevance each anchor is calibrated to.
    #[arg(long)]
    r_p: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct FidelityFlags {
    /// addition or subtraction.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Memory cells per model.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// zero, or default for the per-rule stabilizers.
    #[arg(long)]
    stabilizers: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct SelectivityFlags {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    random_runs: Option<usize>,
    #[arg(long)]
    max_deletions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct RedistributeFlags {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Held-out episodes to explain.
    #[arg(long)]
    episodes: Option<usize>,
    /// Share of total absolute relevance that counts as a detection.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

const SECTIONS: [&str; 8] = [
    "gen",
    "train",
    "explain",
    "audit",
    "dtd-grid",
    "fidelity",
    "selectivity",
    "redistribute",
];

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p, &SECTIONS)?,
        None => FileConfig::default(),
    };
    let out = config::out_dir(cli.out.as_ref(), &file)?;
    let threads = config::threads(cli.threads, &file)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("`threads` must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = commands::Context { out, threads };
    match cli.command {
        Command::Gen(f) => commands::gen(&ctx, config::resolve(&file, "gen", &f)?),
        Command::Train(f) => commands::train(&ctx, config::resolve(&file, "train", &f)?),
        Command::Explain(f) => commands::explain(&ctx, config::resolve(&file, "explain", &f)?),
        Command::Audit(f) => commands::audit(&ctx, config::resolve(&file, "audit", &f)?),
        Command::DtdGrid(f) => commands::dtd_grid(&ctx, config::resolve(&file, "dtd-grid", &f)?),
        Command::Experiment(Experiment::Fidelity(f)) => {
            commands::fidelity(&ctx, config::resolve(&file, "fidelity", &f)?)
        }
        Command::Experiment(Experiment::Selectivity(f)) => {
            commands::selectivity(&ctx, config::resolve(&file, "selectivity", &f)?)
        }
        Command::Experiment(Experiment::Redistribute(f)) => {
            commands::redistribute(&ctx, config::resolve(&file, "redistribute", &f)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            let err = CliError::Usage(first);
            eprintln!("error[{}]: {}", err.kind(), err.message());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {}", err.kind(), err.message());
            ExitCode::from(err.code())
        }
    }
}
