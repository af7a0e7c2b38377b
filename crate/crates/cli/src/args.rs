//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "snic",
    version,
    about = "Learned compression of solar EUV images and coronal-hole segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per rate-distortion tradeoff.
    Train(TrainArgs),
    /// Compress an image into a .snic container.
    Compress(CompressArgs),
    /// Decompress a .snic container.
    Decompress(DecompressArgs),
    /// Evaluate checkpoints over a corpus and write a rate-distortion table.
    Eval(EvalArgs),
    /// Segment coronal holes in a full-disk image.
    Segment(SegmentArgs),
    /// Measure how compression changes the coronal-hole segmentation.
    Impact(ImpactArgs),
    /// Draw rate-distortion and segmentation-impact curves from CSV tables.
    Plot(PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Compress(_) => "compress",
            Command::Decompress(_) => "decompress",
            Command::Eval(_) => "eval",
            Command::Segment(_) => "segment",
            Command::Impact(_) => "impact",
            Command::Plot(_) => "plot",
        }
    }

    pub fn config(&self) -> Option<&PathBuf> {
        match self {
            Command::Train(a) => a.config.as_ref(),
            Command::Compress(a) => a.config.as_ref(),
            Command::Decompress(a) => a.config.as_ref(),
            Command::Eval(a) => a.config.as_ref(),
            Command::Segment(a) => a.config.as_ref(),
            Command::Impact(a) => a.config.as_ref(),
            Command::Plot(a) => a.config.as_ref(),
        }
    }
}

/// Which part of a timestamped manifest to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Every record.
    All,
    /// Records observed January to August.
    Train,
    /// Records observed September to December.
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size transforms (192/320 channels).
    Paper,
    /// Reduced widths for CPU training.
    Desk,
    /// Minimal widths for tests.
    Tiny,
}

/// Mapping of FITS intensities onto the 0..=255 level grid.
#[derive(Debug, Args)]
pub struct EuvArgs {
    /// Treat inputs as EUV intensities: clip to [clip-lo, clip-hi] and map logarithmically
    #[arg(long)]
    pub euv: bool,
    /// Lower clip of the EUV intensity mapping
    #[arg(long, value_name = "COUNTS", default_value_t = snic_core::data::DEFAULT_CLIP_LO)]
    pub clip_lo: f64,
    /// Upper clip of the EUV intensity mapping
    #[arg(long, value_name = "COUNTS", default_value_t = snic_core::data::DEFAULT_CLIP_HI)]
    pub clip_hi: f64,
}

/// Active-contour parameters.
#[derive(Debug, Args)]
pub struct AcweArgs {
    /// Seeding factor: the initial region is every on-disk pixel <= alpha * quiet-sun level
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    /// Weight of the contour length
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Homogeneity weight inside the region
    #[arg(long, default_value_t = 50.0)]
    pub lambda_in: f64,
    /// Homogeneity weight outside the region
    #[arg(long, default_value_t = 1.0)]
    pub lambda_out: f64,
    /// Iteration limit
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Convergence when fewer than this fraction of on-disk pixels flip
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training images: a `path[,timestamp]` manifest or a directory of PNG/PGM/FITS files
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Manifest records to train on
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    /// Run directory receiving lambda_<i>/ckpt_<epoch>/ checkpoints
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Transform widths
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Comma-separated rate-distortion tradeoffs, one model each
    #[arg(long, value_delimiter = ',', default_value = "0.0015,0.0035,0.007,0.0125,0.025,0.041,0.055")]
    pub lambdas: Vec<f64>,
    /// Passes over the corpus
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 means one crop per image
    #[arg(long, default_value_t = 0)]
    pub steps_per_epoch: usize,
    /// Crops per optimizer step
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Side of the square training crops (a multiple of 64)
    #[arg(long, default_value_t = 256)]
    pub crop: usize,
    /// Learning rate at the first step
    #[arg(long, default_value_t = 1e-4)]
    pub lr_start: f64,
    /// Learning rate at the last step (linear annealing)
    #[arg(long, default_value_t = 1.2e-6)]
    pub lr_end: f64,
    /// Also train a conditional discriminator and add its adversarial loss
    #[arg(long)]
    pub adversarial: bool,
    /// Weight of the reconstruction (MSE) term
    #[arg(long, default_value_t = 1.0)]
    pub recon: f64,
    /// Weight of the perceptual (LPIPS) term
    #[arg(long, default_value_t = 1.0)]
    pub perc: f64,
    /// Weight of the adversarial term
    #[arg(long, default_value_t = 0.01)]
    pub adv: f64,
    /// Feature network of the perceptual metric
    #[arg(long, default_value = "random-pyramid")]
    pub backbone: String,
    /// Channels of the discriminator
    #[arg(long, default_value_t = 32)]
    pub disc_width: usize,
    /// Global gradient-norm clip
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    /// Seed of every random choice (initialization, crops, noise)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue the single-lambda run saved in this checkpoint directory (optional)
    #[arg(long, value_name = "CKPT_DIR")]
    pub resume: Option<PathBuf>,
    /// Print a progress line every N steps; 0 disables it
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    #[command(flatten)]
    pub euv: EuvArgs,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Image to compress (PNG, PGM or FITS)
    pub input: PathBuf,
    /// Model file, or a checkpoint directory containing model.snck
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Output container (optional; defaults to the input path with a .snic extension)
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub euv: EuvArgs,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    /// Container to decompress
    pub input: PathBuf,
    /// Model file, or a checkpoint directory containing model.snck
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Reconstructed 8-bit image (optional; defaults to the input path with a .png extension)
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// With --euv: intensity map written as FITS (optional; defaults to the output path with a .fits extension)
    #[arg(long, value_name = "FILE")]
    pub euv_output: Option<PathBuf>,
    #[command(flatten)]
    pub euv: EuvArgs,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file, or a directory searched for model.snck (the last epoch of each training run)
    #[arg(long, value_name = "PATH")]
    pub checkpoints: PathBuf,
    /// Evaluation images: a `path[,timestamp]` manifest or a directory of PNG/PGM/FITS files
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Manifest records to evaluate on
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    /// Rate-distortion table
    #[arg(long, short, value_name = "FILE", default_value = "rd.csv")]
    pub output: PathBuf,
    /// Also draw rd_<metric>.svg into this directory (optional)
    #[arg(long, value_name = "DIR")]
    pub plots: Option<PathBuf>,
    /// Feature network of the perceptual metric
    #[arg(long, default_value = "random-pyramid")]
    pub backbone: String,
    /// Worker threads; results do not depend on it
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Comma-separated standard codecs to add when installed: jpeg, jpeg2000 (optional)
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    pub external: Vec<String>,
    /// Comma-separated quality settings for the standard codecs
    #[arg(long, value_delimiter = ',', default_value = "10,30,50,70,90")]
    pub qualities: Vec<f64>,
    /// Time encode/decode of the first image this many times; 0 skips it
    #[arg(long, default_value_t = 0)]
    pub latency_repeats: usize,
    #[command(flatten)]
    pub euv: EuvArgs,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// Solar-disk geometry override.
#[derive(Debug, Args)]
pub struct DiskArgs {
    /// Disk center row in pixels (optional; taken from the FITS header or the image center)
    #[arg(long, requires_all = ["disk_col", "disk_radius"])]
    pub disk_row: Option<f64>,
    /// Disk center column in pixels (optional; set together with --disk-row and --disk-radius)
    #[arg(long, requires_all = ["disk_row", "disk_radius"])]
    pub disk_col: Option<f64>,
    /// Disk radius in pixels (optional; set together with --disk-row and --disk-col)
    #[arg(long, requires_all = ["disk_row", "disk_col"])]
    pub disk_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Full-disk image (FITS, PNG or PGM)
    pub input: PathBuf,
    /// 1-bit mask PNG; a JSON sidecar is written next to it (optional; defaults to <input>_mask.png)
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub acwe: AcweArgs,
    #[command(flatten)]
    pub disk: DiskArgs,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImpactArgs {
    /// Full-disk images (FITS, PNG or PGM)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Model file, or a directory searched for model.snck (the last epoch of each training run)
    #[arg(long, value_name = "PATH")]
    pub checkpoints: PathBuf,
    /// Number of models to use, spread evenly over the available tradeoffs; 0 uses all
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub lambdas: usize,
    /// DICE table with columns image,codec,bpp,dice
    #[arg(long, short, value_name = "FILE", default_value = "dice.csv")]
    pub output: PathBuf,
    /// Worker threads; results do not depend on it
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub acwe: AcweArgs,
    #[command(flatten)]
    pub disk: DiskArgs,
    #[command(flatten)]
    pub euv: EuvArgs,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Comma-separated rate-distortion tables written by `eval`, merged into one figure per metric (optional)
    #[arg(long, value_delimiter = ',', value_name = "CSV")]
    pub rd: Vec<PathBuf>,
    /// Comma-separated DICE tables written by `impact`, merged into one figure (optional)
    #[arg(long, value_delimiter = ',', value_name = "CSV")]
    pub impact: Vec<PathBuf>,
    /// Directory receiving rd_<metric>.svg and dice_bpp.svg
    #[arg(long, value_name = "DIR", default_value = "plots")]
    pub out: PathBuf,
    /// key = value file of flag defaults; explicit flags take precedence (optional)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}
