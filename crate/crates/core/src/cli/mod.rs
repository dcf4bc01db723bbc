//! The `fcnscape` command line.
//!
//! Settings are layered: built-in defaults, then the `--config` JSON file,
//! then explicit flags. The merged [`RunConfig`] is written to
//! `<out>/run_config.json` before a command starts.

mod commands;
mod config;

pub use commands::{execute, prepare_data, CommandOutput};
pub use config::{
    DataConfig, DataSplit, EvalSection, ModelConfig, RunConfig, SharpnessConfig, SurfaceConfig,
    SynthConfig,
};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::{FileFormat, SynthTask};
use crate::landscape::{Ascent, Start, SurfaceFormat};
use crate::models::Architecture;
use crate::objective::Reduction;

#[derive(Debug, Parser)]
#[command(
    name = "fcnscape",
    version,
    about = "Loss landscapes of fully convolutional networks"
)]
pub struct Cli {
    /// Seed for data generation, splitting, initialisation and directions.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with any subset of the run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image-to-image dataset.
    Synth(SynthArgs),
    /// Train a model with SGD and momentum.
    Train(TrainArgs),
    /// Evaluate the loss on a random 2-D slice through a checkpoint.
    Surface(SurfaceArgs),
    /// Estimate the box-constrained sharpness of a checkpoint.
    Sharpness(SharpnessArgs),
    /// Score predictions with PSNR, SSIM, Rand and VOI.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Task to generate: `blobs` (segmentation) or `denoise` (restoration).
    #[arg(long)]
    pub task: SynthTask,
    /// Number of image pairs.
    #[arg(long)]
    pub count: Option<usize>,
    /// Side length of the square images in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Image channels.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Noise standard deviation range as `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    pub noise: Option<(f64, f64)>,
    /// File format of the written images: `ftsr` or `pgm`.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<FileFormat>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Dataset directory of `<id>_in` / `<id>_gt` files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fraction of pairs that go to the train split.
    #[arg(long)]
    pub split: Option<f64>,
    /// Add the eight flips and rotations of every train pair.
    #[arg(long)]
    pub augment: bool,
    /// Crop every pair into square patches of this side length.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Overlap in pixels between neighbouring patches.
    #[arg(long)]
    pub patch_overlap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Architecture: fcn16s, fcn8s, fcn4s, unet or resskip.
    #[arg(long)]
    pub arch: Option<Architecture>,
    /// Number of pooling stages.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Channels at full resolution; each deeper stage doubles them.
    #[arg(long)]
    pub base: Option<usize>,
    /// Residual blocks per skip, finest stage first, e.g. `3,2,1`.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Heavy-ball momentum coefficient.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Visit the train set in file order every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Loss reduction: `sum-per-sample` or `mean-per-element`.
    #[arg(long)]
    pub reduction: Option<Reduction>,
    /// Stop at the first epoch whose train loss is at most this value.
    #[arg(long)]
    pub target_loss: Option<f64>,
    /// Write a checkpoint after every epoch.
    #[arg(long)]
    pub snapshots: bool,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid intervals per axis; the surface has (n + 1)^2 points.
    #[arg(long)]
    pub n: Option<usize>,
    /// Half extent of the grid along each direction.
    #[arg(long)]
    pub r: Option<f64>,
    /// Evaluate on the train or test split.
    #[arg(long)]
    pub on: Option<DataSplit>,
    /// Output format: `csv` or `json`.
    #[arg(long, value_parser = parse_surface_format)]
    pub format: Option<SurfaceFormat>,
    /// Loss reduction; defaults to the one used in training.
    #[arg(long)]
    pub reduction: Option<Reduction>,
}

#[derive(Debug, Args)]
pub struct SharpnessArgs {
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Box size; repeat the flag for several values.
    #[arg(long = "eps")]
    pub eps: Vec<f64>,
    /// Independent estimates per box size, the k-th seeded with `seed + k`.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Ascent runs per estimate.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Ascent steps per run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step length as a fraction of the per-coordinate box half-width.
    #[arg(long)]
    pub step_fraction: Option<f64>,
    /// `scaled` moves along the scaled gradient, `sign` along its sign.
    #[arg(long)]
    pub ascent: Option<Ascent>,
    /// `local` starts at and around the centre, `uniform` anywhere in the box.
    #[arg(long)]
    pub start: Option<Start>,
    /// Evaluate on the train or test split.
    #[arg(long)]
    pub on: Option<DataSplit>,
    /// Loss reduction; defaults to the one used in training.
    #[arg(long)]
    pub reduction: Option<Reduction>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint whose predictions are scored on `--on`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `<id>_pred.{ftsr,pgm}` files, scored against `--data`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to score a checkpoint on.
    #[arg(long)]
    pub on: Option<DataSplit>,
    /// SSIM window side length (odd).
    #[arg(long)]
    pub window: Option<usize>,
    /// Foreground threshold for segment labelling.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write the checkpoint's predictions as `<id>_pred.ftsr`.
    #[arg(long)]
    pub save_predictions: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(0.0 <= lo && lo <= hi) {
        return Err(format!("need 0 <= lo <= hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn parse_format(s: &str) -> Result<FileFormat, String> {
    match s {
        "ftsr" => Ok(FileFormat::Ftsr),
        "pgm" => Ok(FileFormat::Pgm),
        other => Err(format!("unknown format `{other}` (expected ftsr or pgm)")),
    }
}

fn parse_surface_format(s: &str) -> Result<SurfaceFormat, String> {
    match s {
        "csv" => Ok(SurfaceFormat::Csv),
        "json" => Ok(SurfaceFormat::Json),
        other => Err(format!("unknown format `{other}` (expected csv or json)")),
    }
}

/// Failure of one invocation, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments: exit code 2.
    Usage(String),
    /// I/O or computation failure: exit code 1.
    Runtime(crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to stdout, errors to stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
