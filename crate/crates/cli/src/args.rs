use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "aesfa",
    version,
    about = "Frequency-decomposed arbitrary style transfer",
    long_about = "Frequency-decomposed arbitrary style transfer.\n\n\
        Exit codes: 0 success, 1 usage error, 2 runtime or data error.\n\
        AESFA_THREADS caps the number of worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on content and style image folders.
    Train(TrainArgs),
    /// Stylize one content image, optionally blending two styles.
    Stylize(StylizeArgs),
    /// Score every content x style pair: SSIM against the content and
    /// perceptual style loss.
    Eval(EvalArgs),
    /// Time the forward pass on a square random input.
    Bench(BenchArgs),
}

/// Every option is optional here so that a config file can fill the gaps;
/// built-in defaults apply last.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with training settings (same keys as the checkpoint's
    /// embedded config). Flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Folder of content images, searched recursively.
    #[arg(long, value_name = "DIR")]
    pub content_dir: Option<PathBuf>,
    /// Folder of style images, searched recursively.
    #[arg(long, value_name = "DIR")]
    pub style_dir: Option<PathBuf>,
    /// Output folder for checkpoints and the training log [default: runs].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Total iterations, counted from 0 even when resuming [default: 160000].
    #[arg(long, value_name = "N")]
    pub iters: Option<u64>,
    /// Batch size, at least 2 [default: 8].
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 0.0001].
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    /// Fraction of channels in the low-frequency branch, in [0, 1] [default: 0.5].
    #[arg(long, value_name = "A", allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Channel groups of the predicted kernels [default: 8].
    #[arg(long, value_name = "N")]
    pub ng: Option<usize>,
    /// Hard negatives per sample in the contrastive loss [default: 1].
    #[arg(long, value_name = "K")]
    pub k_neg: Option<usize>,
    /// Content loss weight [default: 1].
    #[arg(long, value_name = "W", allow_negative_numbers = true)]
    pub lambda_c: Option<f64>,
    /// Style loss weight [default: 10].
    #[arg(long, value_name = "W", allow_negative_numbers = true)]
    pub lambda_s: Option<f64>,
    /// Contrastive loss weight [default: 5].
    #[arg(long, value_name = "W", allow_negative_numbers = true)]
    pub lambda_aes: Option<f64>,
    /// Seed for initialisation, data order and augmentation [default: 0].
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Save a checkpoint every N iterations [default: 10000].
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<u64>,
    /// Shorter side after rescaling, before cropping [default: 512].
    #[arg(long, value_name = "PX")]
    pub resize: Option<u32>,
    /// Side of the random square crop, a multiple of 16, at least 48 [default: 256].
    #[arg(long, value_name = "PX")]
    pub crop: Option<u32>,
    /// Divide every network width by this; 1 is the full model [default: 1].
    #[arg(long, value_name = "N")]
    pub width_divisor: Option<usize>,
    /// Perceptual extractor checkpoint; a seeded random surrogate is used
    /// when absent.
    #[arg(long, value_name = "FILE")]
    pub extractor: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    /// Trained model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Content image (PNG or JPEG, any size).
    #[arg(long, value_name = "FILE")]
    pub content: PathBuf,
    /// Style image.
    #[arg(long, value_name = "FILE", required_unless_present_all = ["style_high", "style_low"], conflicts_with_all = ["style_high", "style_low"])]
    pub style: Option<PathBuf>,
    /// Style image supplying the high-frequency code (blending).
    #[arg(long, value_name = "FILE", requires = "style_low")]
    pub style_high: Option<PathBuf>,
    /// Style image supplying the low-frequency code (blending).
    #[arg(long, value_name = "FILE", requires = "style_high")]
    pub style_low: Option<PathBuf>,
    /// Output PNG, written at the content's resolution.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Not accepted: the frequency split is fixed by the checkpoint.
    #[arg(long, value_name = "A", allow_negative_numbers = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Content image; repeatable. Combined with --content-dir.
    #[arg(long, value_name = "FILE")]
    pub content: Vec<PathBuf>,
    /// Style image; repeatable. Combined with --style-dir.
    #[arg(long, value_name = "FILE")]
    pub style: Vec<PathBuf>,
    /// Folder of content images, searched recursively.
    #[arg(long, value_name = "DIR")]
    pub content_dir: Option<PathBuf>,
    /// Folder of style images, searched recursively.
    #[arg(long, value_name = "DIR")]
    pub style_dir: Option<PathBuf>,
    /// Perceptual extractor checkpoint for the style loss; defaults to the
    /// one the model was trained with.
    #[arg(long, value_name = "FILE")]
    pub extractor: Option<PathBuf>,
    /// Report file: one JSON record per pair, then a summary line.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model checkpoint; a freshly initialised full-size model when absent.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Side of the square content and style, a multiple of 16.
    #[arg(long, value_name = "PX", default_value_t = 256)]
    pub size: usize,
    /// Timed forward passes.
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub reps: usize,
    /// Untimed passes before timing starts.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub warmup: usize,
    /// Seed of the fresh model when --model is absent.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Also write the timing report as JSON here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
