//! `cellprep`: synthetic data, training, evaluation, prediction, filter
//! export, the four-arm ablation and gradient checks.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cellprep_core::translation::SigmoidOn;
use cellprep_core::{EnsembleMode, ModelKind};

#[derive(Parser, Debug)]
#[command(
    name = "cellprep",
    version,
    about = "Cell segmentation with learned preprocessing filters and a weighted ensemble"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Seed for synthetic data, initialization and batch order (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every file a command writes.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Seeded batch order; `--deterministic=false` draws it from OS entropy.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub deterministic: Option<bool>,
    /// TOML file with optional `[train]`, `[synth]` and `[ablation]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log level when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train on a dataset directory and write checkpoints and the epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Write color-coded predicted masks.
    Predict(PredictArgs),
    /// Write each class's translation filter heatmap and translated image.
    ExportFilters(PredictArgs),
    /// Run the four-arm comparison over cross-validation folds.
    Ablate(AblateArgs),
    /// Finite-difference checks of every op and the full pipeline.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of image/mask pairs.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Ensemble mode: none, fixed or automated.
    #[arg(long)]
    pub mode: Option<EnsembleMode>,
    /// pipeline or baseline.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// sum or filter.
    #[arg(long)]
    pub sigmoid_on: Option<SigmoidOn>,
    /// Encoder levels of both networks.
    #[arg(long)]
    pub depth: Option<usize>,
    /// First-level channel count of both networks.
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (`images/`, `masks/`, `colormap.toml`).
    #[arg(long)]
    pub data: PathBuf,
    /// Images held out for validation and best-checkpoint selection.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Continue from this checkpoint until the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Class names and mask colors; the built-in three-class map by default.
    #[arg(long)]
    pub colormap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Dataset directory; without it a synthetic dataset is generated.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Size of the generated synthetic dataset.
    #[arg(long, default_value_t = 180)]
    pub synth: usize,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Validation images per fold.
    #[arg(long)]
    pub val: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of random seeds for the op suite.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Skip the full-pipeline check.
    #[arg(long)]
    pub ops_only: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
