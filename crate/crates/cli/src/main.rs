mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddn::model::Variant;
use ddn::DdnError;

/// Exit status for each failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const DATA: u8 = 5;
}

#[derive(Parser, Debug)]
#[command(name = "ddn", version, about = "Conditional density estimation with deconvolutional density networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic two-target dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset file or a delimited table.
    Train(TrainArgs),
    /// Evaluate trained checkpoints.
    Eval(EvalArgs),
    /// Run a named experiment end to end.
    Reproduce(ReproduceArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    /// squares, half_gaussian, gaussian_stick or elastic_ring
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// ddn, ddn_no_vl, mlp or mlp_vl
    #[arg(long, default_value = "ddn")]
    pub variant: Variant,
    /// Weight of the KL term.
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub beta: f64,
    /// Bins per target dimension.
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    /// Maximum number of chain-rule paths.
    #[arg(long = "paths-k", default_value_t = ddn::chain::DEFAULT_MAX_PATHS)]
    pub paths_k: usize,
    /// Target range `lo:hi`, once per target dimension.
    #[arg(long = "range", allow_hyphen_values = true)]
    pub ranges: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainingArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "checkpoint-every")]
    pub checkpoint_every: Option<usize>,
    #[arg(long = "clip-norm")]
    pub clip_norm: Option<f64>,
    /// key=value training configuration applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write 0 instead of wall-clock seconds in metrics logs.
    #[arg(long = "no-time")]
    pub no_time: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset written by `generate` (columns x*, y*).
    #[arg(long, conflicts_with = "table", required_unless_present = "table")]
    pub data: Option<PathBuf>,
    /// Delimited numeric table; split 3:7 and z-scored per trial.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Target columns of `--table` by header name or zero-based index.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Independent trials, each in `trial-<t>/`.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// A `model.ddn` file, a training directory, or a directory of trials.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate against a synthetic task's oracle.
    #[arg(long)]
    pub task: Option<String>,
    /// Test dataset written by `generate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Table the model was trained on; its test split is used.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Write one density grid per condition.
    #[arg(long)]
    pub grid: bool,
    /// Cells per dimension of exported grids (must divide the bin count).
    #[arg(long = "grid-resolution")]
    pub grid_resolution: Option<usize>,
    /// Feature values to condition on (toy tasks).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub conditions: Vec<f64>,
    /// Evaluate at most this many trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Size of the generated toy test set.
    #[arg(long = "test-n", default_value_t = 10_000)]
    pub test_n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReproduceArgs {
    /// toy-2d, ablation-ring, beta-sweep or uci-<name>
    pub experiment: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds per configuration (toy recipes report medians).
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training samples for toy recipes.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long = "test-n", default_value_t = 10_000)]
    pub test_n: usize,
    /// Trials for tabular recipes.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Directory holding `<name>.csv`; defaults to $DDN_DATA_DIR, then `data`.
    #[arg(long = "data-dir")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long, default_value = "ddn")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long = "no-time")]
    pub no_time: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DdnError>() {
            return match e {
                DdnError::Config(_) | DdnError::Usage(_) | DdnError::UnknownTask(_) | DdnError::Dimension(_) => {
                    exit::CONFIG
                }
                DdnError::Io(_) => exit::IO,
                DdnError::Numeric(_) => exit::NUMERIC,
                DdnError::Parse { .. } | DdnError::ZeroVariance(_) | DdnError::Format(_) | DdnError::OutOfRange { .. } => {
                    exit::DATA
                }
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::DATA;
        }
    }
    exit::OTHER
}

fn dispatch(args: Vec<String>) -> anyhow::Result<()> {
    let cli = match Cli::try_parse_from(std::iter::once("ddn".to_string()).chain(args.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            std::process::exit(code.into());
        }
    };
    match cli.command {
        Command::Generate(a) => commands::generate(&a, args),
        Command::Train(a) => commands::train(&a, args),
        Command::Eval(a) => commands::eval(&a, args),
        Command::Reproduce(a) => commands::reproduce(&a, args),
        Command::Replay { manifest } => {
            let m = manifest::RunManifest::read(&manifest)?;
            if m.command == "replay" {
                anyhow::bail!(DdnError::Usage("a replay manifest cannot be replayed".into()));
            }
            dispatch(m.args)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
