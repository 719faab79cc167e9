use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "kwta",
    version,
    about = "k-WTA activation lab: training, attacks and geometry checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Directory receiving every CSV, model file and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for the parallel loops; 1 is fully sequential.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an MNIST model, optionally with sparsity fine-tuning or adversarial training.
    Train(TrainArgs),
    /// Evaluate clean and robust accuracy of a saved model.
    Attack(AttackArgs),
    /// Monte Carlo checks of the k-WTA geometry.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Sample the loss on a 2-D plane around test examples.
    Landscape(LandscapeArgs),
    /// Fit a 1-D function with a k-WTA network and count its discontinuities.
    Fit1d(Fit1dArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MnistCnn,
    MnistMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Kwta,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// MNIST directory with the raw IDX files (default: $KWTA_DATA_DIR, then data/mnist).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackFlags {
    /// none, fgsm, pgd, mifgsm or gaussian.
    #[arg(long, default_value = "pgd")]
    pub attack: String,
    #[arg(long, default_value_t = 0.3)]
    pub eps: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Step size of pgd (default eps/10) and mifgsm (required).
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Momentum decay of mifgsm.
    #[arg(long, default_value_t = 1.0)]
    pub decay: f64,
    /// Draws per example of the gaussian attack.
    #[arg(long, default_value_t = 100)]
    pub noise_samples: usize,
    /// Start pgd at the clean input instead of a random point of the ε-ball.
    #[arg(long)]
    pub no_random_init: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Preset::MnistCnn)]
    pub preset: Preset,
    /// Divides every width of the CNN preset.
    #[arg(long, default_value_t = 8)]
    pub width_divisor: usize,
    /// Hidden widths of the MLP preset.
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationKind::Kwta)]
    pub activation: ActivationKind,
    /// Sparsity ratio of every k-WTA layer (default 0.08).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Incremental fine-tuning `start:end:delta`, two epochs per stage, after `--epochs` at `start`.
    #[arg(long)]
    pub finetune: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Train on a class-balanced random subset of this size.
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Evaluate on the first N test examples after training (0 skips).
    #[arg(long, default_value_t = 10000)]
    pub test_size: usize,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Replace every minibatch by its adversarial perturbation (see the attack flags).
    #[arg(long)]
    pub adv_train: bool,
    #[command(flatten)]
    pub attack: AttackFlags,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub attack: AttackFlags,
    /// Craft the examples on this model and only evaluate the target (black-box transfer).
    #[arg(long)]
    pub transfer_source: Option<PathBuf>,
    /// Attack the first N test examples.
    #[arg(long, default_value_t = 1000)]
    pub test_size: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Perpendicular moves change dense-layer patterns.
    Dense(DenseArgs),
    /// Well-separated points get disjoint patterns.
    Disjoint(DisjointArgs),
    /// Jump size at pattern swaps as a function of the sparsity ratio.
    Jump(JumpArgs),
    /// Distinct Bernoulli points get distinct patterns.
    Bernoulli(BernoulliArgs),
    /// Fit arbitrary labels through disjoint patterns.
    FitLabels(FitLabelsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DenseArgs {
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    /// Layer widths to sweep.
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096")]
    pub l: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.25)]
    pub beta: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DisjointArgs {
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, value_delimiter = ',', default_value = "16384")]
    pub l: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Number of points.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Largest pairwise cosine between points.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JumpArgs {
    #[arg(long, default_value_t = 512)]
    pub l: usize,
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.4")]
    pub gammas: Vec<f64>,
    /// Crossings to collect per ratio.
    #[arg(long, default_value_t = 200)]
    pub crossings: usize,
    /// Scan range of the ray parameter.
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BernoulliArgs {
    /// Number of points.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 8192)]
    pub l: usize,
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitLabelsArgs {
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 16384)]
    pub l: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Number of points.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LandscapeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Also sample this model (e.g. the ReLU twin) on the same planes.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Test-set indices to sample around.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub examples: Vec<usize>,
    /// Half-width of the ε grid.
    #[arg(long, default_value_t = 0.04)]
    pub range: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Sine,
    Constant,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Fit1dArgs {
    #[arg(long, value_enum, default_value_t = Target::Sine)]
    pub target: Target,
    /// Training samples over the domain.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub t_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.15)]
    pub gamma: f64,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Prediction points over the domain.
    #[arg(long, default_value_t = 2000)]
    pub grid: usize,
    /// Jump threshold in multiples of the median adjacent delta.
    #[arg(long, default_value_t = 5.0)]
    pub jump_factor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
