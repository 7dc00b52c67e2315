use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coprompt::corrector::RecallRule;
use coprompt::presets::{LabelSource, Preset};
use coprompt::trainer::DevMetric;

use crate::commands::annotate::{AnnotatePreset, Backend};

/// Detect and correct noisy entity-typing labels with co-prediction prompts.
#[derive(Debug, Parser)]
#[command(name = "coprompt", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fine-tune a co-prediction model and record the divergence trace.
    Train(TrainArgs),
    /// Rewrite label sets with a trained model (recall, then eliminate).
    Correct(CorrectArgs),
    /// Score predicted label sets against gold labels.
    Evaluate(EvaluateArgs),
    /// Relabel frequent mentions with a completion model.
    Annotate(AnnotateArgs),
    /// Write a seeded synthetic corpus with a noisy / ground-truth pair.
    Synth(SynthArgs),
    /// Render a divergence trace and a delta histogram as SVG and CSV.
    Plot(PlotArgs),
    /// Re-execute a previous run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML settings: top-level keys are shared, a `[<command>]` table overrides them.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for outputs and the run manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Single-mask standard prompt with plain BCE.
    #[arg(long)]
    pub baseline: bool,
    /// Use the built-in tiny transformer backbone (the only one shipped).
    #[arg(long)]
    pub tiny_backbone: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub gamma_min: Option<f64>,
    #[arg(long)]
    pub gamma_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub dev_metric: Option<DevMetricArg>,
    #[arg(long)]
    pub n_soft: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DevMetricArg {
    Macro,
    Micro,
}

impl From<DevMetricArg> for DevMetric {
    fn from(m: DevMetricArg) -> Self {
        match m {
            DevMetricArg::Macro => DevMetric::MacroF1,
            DevMetricArg::Micro => DevMetric::MicroF1,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset whose labels are corrected.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Type vocabulary; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Defaults to the preset the checkpoint was trained with.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Origin of the labels, selecting the preset margin.
    #[arg(long)]
    pub source: Option<LabelSource>,
    /// Elimination margin; overrides the preset.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub recall_rule: Option<RecallRuleArg>,
    /// Let gold labels be dropped unless a mask predicts them.
    #[arg(long)]
    pub no_protect_gold: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RecallRuleArg {
    Union,
    Pmask,
}

impl From<RecallRuleArg> for RecallRule {
    fn from(r: RecallRuleArg) -> Self {
        match r {
            RecallRuleArg::Union => RecallRule::UnionBothMasks,
            RecallRuleArg::Pmask => RecallRule::PmaskOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Frequency cutoff and sample size defaults.
    #[arg(long, value_enum)]
    pub preset: Option<AnnotatePreset>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Fixed completion text returned by the mock backend.
    #[arg(long)]
    pub mock_response: Option<String>,
    #[arg(long)]
    pub min_frequency: Option<usize>,
    /// Number of filtered examples to draw; 0 keeps the whole pool.
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long = "model-name")]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// File whose contents replace the prompt template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Requests per second.
    #[arg(long)]
    pub rate_limit: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub retry_backoff_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub types: Option<usize>,
    /// Training examples.
    #[arg(long)]
    pub examples: Option<usize>,
    #[arg(long)]
    pub dev_examples: Option<usize>,
    /// Probability that a kept gold label is replaced by a wrong one.
    #[arg(long)]
    pub swap: Option<f64>,
    /// Probability that a gold label is dropped.
    #[arg(long)]
    pub drop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trace CSV written by `train`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Report JSON written by `correct`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
