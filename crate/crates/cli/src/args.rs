use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kdebias::synth::CorrelationMode;
use kdebias::trainer::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "kdebias", version, about = "Closed-form kernel debiasing of image/text embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic train/test pair with manifests.
    Synth(SynthArgs),
    /// Train encoders on a manifest and save the model.
    Train(TrainArgs),
    /// Predict target classes for the images of a manifest.
    Predict(PredictArgs),
    /// Evaluate a saved model against a labelled manifest.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of τ and τ_z.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Spurious,
    Intrinsic,
}

impl From<Mode> for CorrelationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Spurious => CorrelationMode::Spurious,
            Mode::Intrinsic => CorrelationMode::Intrinsic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "spurious")]
    pub mode: Mode,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Fraction of training rows whose sensitive value matches the target.
    #[arg(long, default_value_t = 0.95)]
    pub rho: f64,
    #[arg(long, default_value_t = 6.0)]
    pub signal_gap: f64,
    #[arg(long, default_value_t = 18.0)]
    pub bias_gap: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Tilt of the class prompts towards the sensitive axis.
    #[arg(long, default_value_t = 0.11)]
    pub prompt_leak: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test split size; 0 skips the test split.
    #[arg(long, default_value_t = 2000)]
    pub test_n: usize,
    /// Test split correlation; defaults to 0.5 (balanced) in spurious mode and to `rho` otherwise.
    #[arg(long)]
    pub test_rho: Option<f64>,
}

/// Flags mirroring [`TrainConfig`].
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 0.7)]
    pub tau_i: f64,
    #[arg(long, default_value_t = 0.7)]
    pub tau_t: f64,
    #[arg(long, default_value_t = 0.7)]
    pub tau_z: f64,
    #[arg(long, default_value_t = kdebias::solver::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Output dimension (default: number of classes − 1).
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub rff_dim: usize,
    /// RBF bandwidth (default: median heuristic).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use ground-truth target labels instead of pseudo labels.
    #[arg(long)]
    pub supervised_y: bool,
    /// Use ground-truth sensitive labels instead of zero-shot ones.
    #[arg(long)]
    pub supervised_s: bool,
    /// Pre-sample a class-balanced subset of the training rows.
    #[arg(long)]
    pub balance: bool,
}

impl ConfigArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            tau_i: self.tau_i,
            tau_t: self.tau_t,
            tau_z: self.tau_z,
            gamma: self.gamma,
            r: self.r,
            rff_dim: self.rff_dim,
            bandwidth: self.bandwidth,
            iters: self.iters,
            seed: self.seed,
            supervised_y: self.supervised_y,
            supervised_s: self.supervised_s,
            balance_presample: self.balance,
        }
    }
}

/// Evaluation options shared by `train`, `eval` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct EvalOptions {
    /// Target class treated as positive by EOD.
    #[arg(long, default_value_t = 1)]
    pub positive: usize,
    /// Depth of the MaxSkew@k rankings (capped at the split size).
    #[arg(long, default_value_t = 1000)]
    pub skew_k: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest evaluated after training (default: the training manifest, when labelled).
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    /// Output directory for `model.kdbs` and `run.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub eval: EvalOptions,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV with one `row,yhat` line per image.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalOptions,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    /// Comma-separated τ values, applied to both τ_I and τ_T.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<f64>,
    /// Comma-separated τ_z values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau_z_grid: Vec<f64>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub eval: EvalOptions,
}
