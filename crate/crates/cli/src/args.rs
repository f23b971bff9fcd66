use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lidargen::corruption::CorruptionKind;
use lidargen::models::GanObjective;
use lidargen::{Representation, RowAssignment};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "lidargen", version, about = "Generative models of lidar scans projected onto a 2D grid", next_line_help = true)]
pub struct Cli {
    /// Worker threads for data preparation and evaluation (0 = one per core)
    #[arg(long, global = true, default_value_t = 0, display_order = 900)]
    pub threads: usize,
    /// Seed for every random choice the command makes
    #[arg(long, global = true, default_value_t = 0, display_order = 900)]
    pub seed: u64,
    /// TOML file of flag defaults (keys are flag names, optionally under a [subcommand] table)
    #[arg(long, global = true, display_order = 900)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic street-scene dataset of raw .bin scans
    Synth(SynthArgs),
    /// Project raw scans into train/val/test grid containers plus normalization stats
    Preprocess(PreprocessArgs),
    /// Train the convolutional VAE (or AE with --beta 0)
    TrainVae(TrainVaeArgs),
    /// Train the DCGAN-style generator and discriminator
    TrainGan(TrainGanArgs),
    /// Random hyperparameter search over VAE configurations
    Search(SearchArgs),
    /// Reconstruction error of VAE checkpoints under a corruption sweep
    EvalRecon(EvalReconArgs),
    /// Draw samples from a checkpoint and export them as XYZ point files
    Sample(SampleArgs),
    /// Match generated samples to their nearest test scans in discriminator feature space
    MatchNn(MatchNnArgs),
    /// Print statistics of a scan, grid container, checkpoint or dataset directory
    Inspect(InspectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::TrainVae(_) => "train-vae",
            Command::TrainGan(_) => "train-gan",
            Command::Search(_) => "search",
            Command::EvalRecon(_) => "eval-recon",
            Command::Sample(_) => "sample",
            Command::MatchNn(_) => "match-nn",
            Command::Inspect(_) => "inspect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationArg {
    Polar,
    Cartesian,
}

impl From<RepresentationArg> for Representation {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::Polar => Representation::Polar,
            RepresentationArg::Cartesian => Representation::Cartesian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowAssignmentArg {
    RingSegmentation,
    UniformElevation,
}

impl From<RowAssignmentArg> for RowAssignment {
    fn from(r: RowAssignmentArg) -> Self {
        match r {
            RowAssignmentArg::RingSegmentation => RowAssignment::RingSegmentation,
            RowAssignmentArg::UniformElevation => RowAssignment::UniformElevation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveArg {
    Relativistic,
    Standard,
}

impl From<ObjectiveArg> for GanObjective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Relativistic => GanObjective::Relativistic,
            ObjectiveArg::Standard => GanObjective::Standard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepArg {
    Noise,
    Removal,
    Both,
}

impl SweepArg {
    pub fn kinds(self) -> &'static [CorruptionKind] {
        match self {
            SweepArg::Noise => &[CorruptionKind::Noise],
            SweepArg::Removal => &[CorruptionKind::Removal],
            SweepArg::Both => &[CorruptionKind::Noise, CorruptionKind::Removal],
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Dataset root to create
    #[arg(long, env = "LIDARGEN_DATA_DIR")]
    pub output: PathBuf,
    /// Number of scenes (one directory each)
    #[arg(long, default_value_t = 8)]
    pub sequences: usize,
    /// Scans per scene
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Laser rings per scan
    #[arg(long, default_value_t = 40)]
    pub rows: usize,
    /// Firings per ring
    #[arg(long, default_value_t = 256)]
    pub cols: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Dataset root holding .bin scans, one directory per sequence
    #[arg(long, env = "LIDARGEN_DATA_DIR")]
    pub input: PathBuf,
    /// Output directory for containers, manifest and stats
    #[arg(long)]
    pub output: PathBuf,
    /// Grid rows
    #[arg(long, default_value_t = 40)]
    pub height: usize,
    /// Grid columns (azimuth bins)
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    /// How points are assigned to rows
    #[arg(long, value_enum, default_value_t = RowAssignmentArg::RingSegmentation)]
    pub row_assignment: RowAssignmentArg,
    /// Lowest elevation in degrees (uniform-elevation rows)
    #[arg(long, default_value_t = -24.8, allow_negative_numbers = true)]
    pub elevation_min: f64,
    /// Highest elevation in degrees (uniform-elevation rows)
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub elevation_max: f64,
    /// Keep every k-th frame of each sequence
    #[arg(long, default_value_t = 1)]
    pub subsample: usize,
    /// Fraction of scans assigned to the training split
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Fraction of scans assigned to the validation split (the rest is test)
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Range clip in meters for the normalization stats
    #[arg(long, default_value_t = 80.0)]
    pub clip_range: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Grid representation the model works in
    #[arg(long, value_enum, default_value_t = RepresentationArg::Polar)]
    pub representation: RepresentationArg,
    /// Width multiplier of every convolution
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    /// Adam first-moment decay
    #[arg(long, default_value_t = 0.5)]
    pub beta1: f64,
    /// Adam second-moment decay
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    /// Range clip in meters for the normalization stats
    #[arg(long, default_value_t = 80.0)]
    pub clip_range: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct VaeObjectiveArgs {
    /// KL weight (0 trains a plain autoencoder)
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Score reconstruction on every cell, not only occupied ones
    #[arg(long)]
    pub unmasked: bool,
    /// Validation scans per evaluation (0 = all)
    #[arg(long, default_value_t = 8)]
    pub val_scans: usize,
    /// Point cap for validation distances
    #[arg(long, default_value_t = 512)]
    pub val_points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainVaeArgs {
    /// Cartesian training grids (.lgrd)
    #[arg(long)]
    pub train: PathBuf,
    /// Cartesian validation grids (.lgrd)
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Run directory
    #[arg(long)]
    pub output: PathBuf,
    /// Latent dimension
    #[arg(long, default_value_t = 64)]
    pub latent_dim: usize,
    /// Learning rate
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// Batch size
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Optimizer steps
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Validate every this many steps (0 = only at the end)
    #[arg(long, default_value_t = 250)]
    pub val_every: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub objective: VaeObjectiveArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGanArgs {
    /// Cartesian training grids (.lgrd)
    #[arg(long)]
    pub train: PathBuf,
    /// Run directory
    #[arg(long)]
    pub output: PathBuf,
    /// Latent dimension
    #[arg(long, default_value_t = 64)]
    pub latent_dim: usize,
    /// Learning rate
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// Batch size
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Optimizer steps (one discriminator and one generator update each)
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Adversarial loss
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Relativistic)]
    pub objective: ObjectiveArg,
    /// Train only the discriminator
    #[arg(long)]
    pub freeze_generator: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    /// Cartesian training grids (.lgrd)
    #[arg(long)]
    pub train: PathBuf,
    /// Cartesian validation grids (.lgrd)
    #[arg(long)]
    pub val: PathBuf,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
    /// Number of sampled configurations
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Training steps per trial
    #[arg(long, default_value_t = 200)]
    pub budget_steps: usize,
    /// Learning-rate candidates
    #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 2e-4, 1e-3])]
    pub lr: Vec<f64>,
    /// Latent-dimension candidates
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 160])]
    pub latent_dim: Vec<usize>,
    /// Batch-size candidates
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
    pub batch_size: Vec<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub objective: VaeObjectiveArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalReconArgs {
    /// VAE checkpoint (repeat to compare models)
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Name per checkpoint in reports (defaults to the file stem)
    #[arg(long)]
    pub label: Vec<String>,
    /// Cartesian test grids (.lgrd)
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
    /// Corruption sweeps to run
    #[arg(long, value_enum, default_value_t = SweepArg::Both)]
    pub sweep: SweepArg,
    /// Use only the first N test scans (0 = all)
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    /// Points per scan after subsampling both sets to a common size
    #[arg(long, default_value_t = 1024)]
    pub n_max: usize,
    /// Largest point count solved with the exact EMD
    #[arg(long, default_value_t = 512)]
    pub exact_max: usize,
    /// Relative accuracy of the approximate EMD
    #[arg(long, default_value_t = 1e-3)]
    pub rel_tol: f64,
    /// Scans per forward pass
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// GAN or VAE checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 8)]
    pub num: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct MatchNnArgs {
    /// GAN checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cartesian test grids (.lgrd)
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
    /// Number of generated samples
    #[arg(long, default_value_t = 8)]
    pub num: usize,
    /// Neighbors reported per sample
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    /// A .bin scan, .lgrd container, .lgck checkpoint or dataset directory
    pub path: PathBuf,
}
