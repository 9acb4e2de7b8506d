mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndnn::systems::SystemKind;

/// Synthetic-data harness for multi-level enhancement/recognition networks.
#[derive(Parser, Debug)]
#[command(name = "ndnn", version, about)]
pub struct Cli {
    /// Seed for the corpus (gen-data), training (train) or the fixture (gradcheck).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `compare`.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Only print errors and final results.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate train/dev/test corpora.
    GenData(GenDataArgs),
    /// Train one system.
    Train(TrainArgs),
    /// Evaluate a checkpoint per level.
    Eval(EvalArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
    /// Train all systems over several seeds and tabulate test FER.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// JSON with optional `corpus` and `contamination` objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides applied on top of the JSON experiment config.
#[derive(Args, Debug, Default)]
pub struct TrainOverrides {
    /// JSON with optional `arch` and `train` objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Unrolled levels for netdnn systems [default: 3].
    #[arg(long)]
    pub levels: Option<usize>,
    /// Weight of the cross gradient from the level above [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Initial learning rate [default: 0.08].
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Minibatch size [default: 128].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Dropout rate of hidden layers [default: 0.2].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Epoch cap [default: 20].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without a new best dev FER before stopping [default: 4].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Relative dev FER gain below which the learning rate halves [default: 0.001].
    #[arg(long)]
    pub lr_halving_threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// single-dnn, multitask, joint-se-sr, netdnn or netdnn-residual.
    #[arg(long)]
    pub system: SystemKind,
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for the manifest, checkpoints and epoch log.
    #[arg(long)]
    pub out: PathBuf,
    /// Turn `netdnn` into `netdnn-residual`.
    #[arg(long)]
    pub residual: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A dataset file, or a gen-data directory (its test split is used).
    #[arg(long)]
    pub data: PathBuf,
    /// Report only this level.
    #[arg(long)]
    pub level: Option<usize>,
    /// Also write the metrics as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check the residual variant.
    #[arg(long)]
    pub residual: bool,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Batch-norm statistics during the check: eval or train.
    #[arg(long, default_value = "eval")]
    pub mode: String,
    /// Check the cross gradient of all higher levels.
    #[arg(long)]
    pub deep: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Output directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Subset of systems, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub systems: Vec<SystemKind>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ndnn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
