use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "gradrecon", version, about = "Anomaly localization by gradient descent in input space")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train an autoencoder on the normal training images of a dataset.
    Train(TrainArgs),
    /// Project images onto the learned normal manifold.
    Project(ProjectArgs),
    /// Score projections against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Restore masked (or, with --blind, unknown) corrupted regions.
    Inpaint(InpaintArgs),
    /// AUROC of single-evaluation scores next to the projection score.
    CompareScores(CompareArgs),
    /// AUROC after every few iterations, standard vs weighted updates.
    Convergence(ConvergenceArgs),
    /// Write a synthetic texture dataset with ground-truth masks.
    MakeData(MakeDataArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Project(_) => "project",
            Command::Evaluate(_) => "evaluate",
            Command::Inpaint(_) => "inpaint",
            Command::CompareScores(_) => "compare-scores",
            Command::Convergence(_) => "convergence",
            Command::MakeData(_) => "make-data",
        }
    }
}

/// Options every command accepts.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// key=value file; keys are long flag names, flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run per-image work on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    L2ae,
    Dsae,
    Vae,
    GammaVae,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory (train/good/*.pgm is used).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the loss history goes to <stem>.loss.csv beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "vae")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub latent_dim: usize,
    /// Encoder channels, one stride-2 convolution each.
    #[arg(long, value_delimiter = ',', default_value = "32,32,64,64")]
    pub conv_channels: Vec<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Standard,
    Masked,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Plain,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopArg {
    /// L_r below the --quantile of the training losses (default: their minimum).
    Threshold,
    /// Energy decrease below --tolerance for --patience iterations.
    Converged,
    /// Always run --max-iters iterations.
    MaxIters,
}

/// Energy and descent settings shared by the projecting commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EnergyArgs {
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value = "plain")]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value = "threshold")]
    pub stop: StopArg,
    #[arg(long, default_value_t = 0.0)]
    pub quantile: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Do not clamp pixels to [0, 1] after each step.
    #[arg(long)]
    pub no_clamp: bool,
}

/// Where the images to process come from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Image files (PGM/PPM or TNSR).
    #[arg(long, num_args = 1.., conflicts_with = "data")]
    pub input: Vec<PathBuf>,
    /// Dataset directory; all of its test images are used.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: ModeArg,
    /// Binary masks for --mode masked: one per input, or one for all.
    #[arg(long, num_args = 1..)]
    pub mask: Vec<PathBuf>,
    /// Keep x_t every this many iterations (written as TNSR).
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[command(flatten)]
    pub energy: EnergyArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Dataset directory with ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of `project --data`.
    #[arg(long)]
    pub projections: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Recompute baseline reconstructions with this model when
    /// `<name>.recon.tnsr` files are absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Histogram bins for the improvement rates.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InpaintArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corrupted images.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Corruption masks, one per input (or one for all).
    #[arg(long, num_args = 1..)]
    pub mask: Vec<PathBuf>,
    /// Unknown corruption: weighted updates, no mask.
    #[arg(long, conflicts_with = "mask")]
    pub blind: bool,
    /// Uncorrupted originals; adds error columns to inpaint.csv.
    #[arg(long, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub energy: EnergyArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionModeArg {
    Standard,
    Weighted,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// VAE or γ-VAE checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directories, one output row each.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Update rule of the projection column.
    #[arg(long, value_enum, default_value = "weighted")]
    pub mode: ProjectionModeArg,
    #[command(flatten)]
    pub energy: EnergyArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub snapshot_every: usize,
    #[arg(long, value_enum, default_value = "plain")]
    pub optimizer: OptimizerArg,
    #[arg(long)]
    pub no_clamp: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureArg {
    Grid,
    Stripes,
    Checker,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MakeDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "grid")]
    pub texture: TextureArg,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub test_normal: usize,
    #[arg(long, default_value_t = 50)]
    pub test_anomalous: usize,
    #[arg(long, default_value_t = 6)]
    pub defect_min: usize,
    #[arg(long, default_value_t = 14)]
    pub defect_max: usize,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}
