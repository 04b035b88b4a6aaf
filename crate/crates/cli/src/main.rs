mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "subband", version, about = "Train, evaluate and cost subband-decomposition CNNs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing per-epoch CSV records and checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint on a test split.
    Eval(EvalArgs),
    /// Print analytic operation counts.
    Cost(CostArgs),
    /// Accuracy under input or weight quantisation.
    Quant(QuantArgs),
    /// Frequency responses of frontend filters.
    Freq(FreqArgs),
    /// List the built-in configurations.
    Presets,
}

#[derive(Args)]
pub struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// mnist, cifar10 or cifar100; inferred from the config name when omitted.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Preset name or TOML path.
    #[arg(long)]
    pub config: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train until this many epochs are complete.
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Replace the configured frontend mode (asd, casd, wsd).
    #[arg(long)]
    pub frontend: Option<String>,
    /// Use only the first N training images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Use only the first N test images for the final score.
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    /// Fraction of the training split held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Batches between progress lines (0 disables them).
    #[arg(long, default_value_t = 50)]
    pub progress: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// center or five_patch.
    #[arg(long, default_value = "center")]
    pub protocol: String,
    /// Per-sample predictions, one JSON object per line.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    /// Write every layer output for the first test images into this directory.
    #[arg(long)]
    pub dump_activations: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub dump_count: usize,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Args)]
pub struct CostArgs {
    /// Preset names or TOML paths.
    #[arg(required = true)]
    pub configs: Vec<String>,
    /// Configuration to report reductions against.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Write per-layer CSVs into this directory.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct QuantArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Settings such as input@4 or weights@8; all supported settings when omitted.
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Args)]
pub struct FreqArgs {
    /// Checkpoint whose frontend is plotted.
    #[arg(long, conflicts_with = "config")]
    pub checkpoint: Option<PathBuf>,
    /// Plot a freshly initialised frontend instead.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Node index, branch label such as UL, or "all".
    #[arg(long, default_value = "all")]
    pub node: String,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Cost(a) => commands::cost(&a),
        Command::Quant(a) => commands::quant(&a),
        Command::Freq(a) => commands::freq(&a),
        Command::Presets => commands::presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
