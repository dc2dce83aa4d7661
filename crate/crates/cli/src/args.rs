use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fmpx::nn::Activation;

/// Lightweight skin-lesion classifier: training, evaluation and tooling.
///
/// Every flag can also be set through an environment variable named
/// FMPX_<FLAG> in upper case with dashes as underscores, e.g. FMPX_SEED.
/// Precedence is flag or environment, then --config file, then default.
#[derive(Debug, Parser)]
#[command(name = "fmpx", version, propagate_version = true)]
pub struct Cli {
    /// Worker threads [default: 1 for bench, all cores otherwise]
    #[arg(long, global = true, env = "FMPX_THREADS")]
    pub threads: Option<usize>,

    /// Log filter (error, warn, info, debug, trace)
    #[arg(long, global = true, env = "FMPX_LOG", default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-validated training on an image-folder dataset
    Train(TrainArgs),
    /// Metrics, confusion matrix and ROC curves for a checkpoint
    Eval(EvalArgs),
    /// Average-FPS benchmark of single-image inference
    Bench(BenchArgs),
    /// Class probabilities for one image or a directory
    Classify(ClassifyArgs),
    /// Grad-CAM heatmap and overlay for one image
    Gradcam(GradcamArgs),
    /// Expand a dataset with random augmentation pipelines
    Augment(AugmentArgs),
    /// Rank models by practicality score from a metrics CSV
    Score(ScoreArgs),
}

/// Network topology switches shared by the commands that build a model.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Drop the local/global fusion block
    #[arg(long, env = "FMPX_NO_ABLGFM")]
    pub no_ablgfm: bool,

    /// Drop the two auxiliary classification heads
    #[arg(long, env = "FMPX_NO_AUX")]
    pub no_aux: bool,

    /// Disable DropBlock regularisation
    #[arg(long, env = "FMPX_NO_DROPBLOCK")]
    pub no_dropblock: bool,

    /// Nonlinearity throughout the backbone
    #[arg(long, env = "FMPX_ACTIVATION", default_value_t = Activation::Gelu, value_parser = parse_activation)]
    pub activation: Activation,

    /// Output channels of the final 1x1 convolution
    #[arg(long, env = "FMPX_STAGE5", default_value_t = 256)]
    pub stage5: usize,

    /// DropBlock drop probability
    #[arg(long, env = "FMPX_DROPBLOCK_PROB", default_value_t = 0.1)]
    pub dropblock_prob: f64,
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root with one sub-directory per class
    #[arg(long, env = "FMPX_DATA")]
    pub data: PathBuf,

    /// Output directory for checkpoints, logs, metrics and the manifest
    #[arg(long, env = "FMPX_OUT", default_value = "fmpx-run")]
    pub out: PathBuf,

    /// JSON config ({"model": .., "train": .., "data": ..}) or a previous run manifest
    #[arg(long, env = "FMPX_CONFIG")]
    pub config: Option<PathBuf>,

    /// Number of cross-validation folds
    #[arg(long, env = "FMPX_FOLDS", default_value_t = 5)]
    pub folds: usize,

    /// Train only this 1-based fold [default: every fold]
    #[arg(long, env = "FMPX_FOLD")]
    pub fold: Option<usize>,

    /// Seed for weights, shuffling, crops and fold assignment
    #[arg(long, env = "FMPX_SEED", default_value_t = 0)]
    pub seed: u64,

    #[arg(long, env = "FMPX_EPOCHS", default_value_t = 100)]
    pub epochs: usize,

    #[arg(long, env = "FMPX_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,

    /// Adam learning rate
    #[arg(long, env = "FMPX_LR", default_value_t = 1e-4)]
    pub lr: f64,

    /// Loss weights of the two auxiliary heads
    #[arg(long, env = "FMPX_AUX_WEIGHTS", value_delimiter = ',', num_args = 2, default_values_t = [1.0, 1.0])]
    pub aux_weights: Vec<f64>,

    /// Keep the same sample order every epoch
    #[arg(long, env = "FMPX_NO_SHUFFLE")]
    pub no_shuffle: bool,

    /// Per-class image counts to augment up to, comma separated in class order
    #[arg(long, env = "FMPX_AUGMENT_TARGETS", value_delimiter = ',')]
    pub augment_targets: Option<Vec<usize>>,

    #[arg(long, env = "FMPX_AUGMENT_SEED", default_value_t = 0)]
    pub augment_seed: u64,

    /// Augment the whole dataset before splitting into folds
    #[arg(long, env = "FMPX_SPLIT_AFTER_AUGMENT")]
    pub split_after_augment: bool,

    /// Evaluate the held-out fold after every epoch
    #[arg(long, env = "FMPX_EVAL_EACH_EPOCH")]
    pub eval_each_epoch: bool,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    /// Checkpoint file
    #[arg(long, env = "FMPX_CKPT")]
    pub ckpt: PathBuf,

    /// Model config JSON [default: <ckpt>.json]
    #[arg(long, env = "FMPX_MODEL_CONFIG")]
    pub model_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,

    /// Dataset root with one sub-directory per class
    #[arg(long, env = "FMPX_DATA")]
    pub data: PathBuf,

    /// Output directory
    #[arg(long, env = "FMPX_OUT", default_value = "fmpx-eval")]
    pub out: PathBuf,

    #[arg(long, env = "FMPX_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a freshly initialised default model when absent
    #[arg(long, env = "FMPX_CKPT")]
    pub ckpt: Option<PathBuf>,

    /// Model config JSON [default: <ckpt>.json]
    #[arg(long, env = "FMPX_MODEL_CONFIG")]
    pub model_config: Option<PathBuf>,

    /// Timed single-image passes
    #[arg(long, env = "FMPX_N", default_value_t = 100)]
    pub n: usize,

    /// Untimed passes before timing starts
    #[arg(long, env = "FMPX_WARMUP", default_value_t = 10)]
    pub warmup: usize,

    /// Image to feed; seeded random input when absent
    #[arg(long, env = "FMPX_IMAGE")]
    pub image: Option<PathBuf>,

    /// Seed of the random input and of the fresh model
    #[arg(long, env = "FMPX_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Let kernels split work across the thread pool
    #[arg(long, env = "FMPX_PARALLEL")]
    pub parallel: bool,

    /// Result JSON file; also printed to stdout
    #[arg(long, env = "FMPX_OUT", default_value = "bench.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,

    /// One image, or a directory whose images are classified in name order
    #[arg(long, env = "FMPX_IMAGE")]
    pub image: PathBuf,

    /// Classes listed per image
    #[arg(long, env = "FMPX_TOP_K", default_value_t = 4)]
    pub top_k: usize,

    /// Comma-separated class names [default: from the sidecar config, else class0..]
    #[arg(long, env = "FMPX_CLASSES", value_delimiter = ',')]
    pub classes: Option<Vec<String>>,

    /// Result JSON file; also printed to stdout
    #[arg(long, env = "FMPX_OUT", default_value = "classify.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,

    #[arg(long, env = "FMPX_IMAGE")]
    pub image: PathBuf,

    /// Target class [default: the predicted class]
    #[arg(long, env = "FMPX_CLASS")]
    pub class: Option<usize>,

    /// Feature map to explain: stem, stage2..stage5 or ablgfm [default: ablgfm, or stage5 without it]
    #[arg(long, env = "FMPX_LAYER")]
    pub layer: Option<String>,

    /// Heatmap opacity in the overlay
    #[arg(long, env = "FMPX_ALPHA", default_value_t = 0.4)]
    pub alpha: f64,

    /// Also write the raw heatmap values as CSV
    #[arg(long, env = "FMPX_CSV")]
    pub csv: bool,

    /// Output directory
    #[arg(long, env = "FMPX_OUT", default_value = "fmpx-gradcam")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Dataset root with one sub-directory per class
    #[arg(long, env = "FMPX_DATA")]
    pub data: PathBuf,

    /// Per-class totals after expansion, comma separated in class order
    #[arg(long, env = "FMPX_TARGETS", value_delimiter = ',', required = true)]
    pub targets: Vec<usize>,

    #[arg(long, env = "FMPX_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Output dataset root; images are written as PPM
    #[arg(long, env = "FMPX_OUT", default_value = "fmpx-augmented")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV with header name,accuracy,fps,recall,specificity
    #[arg(long = "in", env = "FMPX_IN")]
    pub input: PathBuf,

    /// Ranked CSV; printed to stdout when absent
    #[arg(long, env = "FMPX_OUT")]
    pub out: Option<PathBuf>,
}
