//! Command-line front end: every command is a thin wrapper over a library
//! call and writes a manifest recording its config, seeds and file digests.

mod cmd;
mod error;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use cmd::{
    cmd_detect, cmd_reconstruct, cmd_score, cmd_spectra, cmd_synth, cmd_train, model_spec_for, synth_config,
};
pub use error::{CliError, CliResult, ErrorCategory};

#[derive(Debug, Parser)]
#[command(name = "hvts", version, about = "Hierarchical VAE reconstruction and anomaly detection for multichannel time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic EEG-like segment file.
    Synth(SynthArgs),
    /// Train one or more models and write checkpoints and histories.
    Train(TrainArgs),
    /// Reconstruction-error matrices of checkpoints on a segment file.
    Score(ScoreArgs),
    /// Outlier repetitions from an error matrix.
    Detect(DetectArgs),
    /// Welch power spectra of segments and, optionally, their reconstructions.
    Spectra(SpectraArgs),
    /// Write a segment file of reconstructions.
    Reconstruct(ReconstructArgs),
}

/// Runs a parsed command; returns the main output path.
pub fn run(cli: &Cli) -> CliResult<PathBuf> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Spectra(a) => cmd_spectra(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    V3,
    Hv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorArg {
    Standard,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    /// Stratified train/validation/test split.
    Stratified,
    /// Every segment in the training set (overfitting experiments).
    AllTrain,
}

/// Latent level to decode from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelArg {
    Z1,
    Z2,
    Z3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsArg {
    Zero,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetArg {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Output segment file.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 128.0)]
    pub fs: f64,
    /// Exponent of the 1/f background.
    #[arg(long, default_value_t = 1.0)]
    pub slope: f64,
    /// Per-channel standard deviation, microvolts.
    #[arg(long, default_value_t = 10.0)]
    pub amplitude: f64,
    #[arg(long)]
    pub no_alpha: bool,
    #[arg(long, default_value_t = 4)]
    pub labels: u32,
    #[arg(long, default_value_t = 1)]
    pub subject: u32,
    /// Fraction of segments to saturate (exact count, chosen by seed).
    #[arg(long, default_value_t = 0.0)]
    pub saturate_frac: f64,
    #[arg(long, default_value_t = 100.0)]
    pub rail: f64,
    /// Saturated span as a fraction of the segment.
    #[arg(long, default_value_t = 0.25)]
    pub saturate_duration: f64,
    /// Per-segment probability of 50 Hz line noise.
    #[arg(long, default_value_t = 0.0)]
    pub line_noise_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    pub line_noise_amplitude: f64,
    /// Per-segment probability of 20-60 Hz muscle noise.
    #[arg(long, default_value_t = 0.0)]
    pub muscle_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    pub muscle_gain: f64,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "hv")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "standard")]
    pub prior: PriorArg,
    /// Temporal kernel length; defaults to 64 below 200 Hz sampling, else 128.
    #[arg(long)]
    pub kernel_t: Option<usize>,
    /// Separable kernel length; defaults to a quarter of the temporal kernel.
    #[arg(long)]
    pub kernel_s: Option<usize>,
    /// Pooling after the spatial block (0 = none).
    #[arg(long)]
    pub pool1: Option<usize>,
    /// Pooling after the separable block.
    #[arg(long)]
    pub pool2: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Soft-DTW smoothing.
    #[arg(long, default_value_t = 1.0)]
    pub gamma_dtw: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 30)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Per-epoch learning-rate decay.
    #[arg(long, default_value_t = 0.999)]
    pub gamma_lr: f64,
    /// KL weight.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Sakoe-Chiba band for the training loss.
    #[arg(long)]
    pub band: Option<usize>,
    /// Score the training pool every this many epochs (0 = last only).
    #[arg(long, default_value_t = 1)]
    pub score_every: usize,
    /// Save a checkpoint every this many epochs (0 = last only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, value_enum, default_value = "stratified")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.5)]
    pub train_frac: f64,
    /// Validation share of the training pool.
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    /// Defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Final-error multiple of the peer median that marks a run unsuccessful.
    #[arg(long, default_value_t = 5.0)]
    pub fail_threshold: f64,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecodeArgs {
    /// Deepest latent level used; defaults to all levels of the model.
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    #[arg(long, value_enum, default_value = "zero")]
    pub eps: EpsArg,
    /// Seed of sampled eps.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One or more checkpoints; their matrices are averaged.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Split file (metrics/split.json of a training run) selecting a subset.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub subset: SubsetArg,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    /// Error matrix JSON (metrics/average_error.json of a score run).
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Neighbour count.
    #[arg(long, default_value_t = 15, conflicts_with = "k_auto")]
    pub k: usize,
    /// Use k = max(3, rows / 20).
    #[arg(long)]
    pub k_auto: bool,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectraArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Also estimate the spectra of this checkpoint's reconstructions.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long, default_value_t = 500)]
    pub window: usize,
    #[arg(long, default_value_t = 250)]
    pub overlap: usize,
    /// Single channel; default averages all channels.
    #[arg(long)]
    pub channel: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output segment file.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}
