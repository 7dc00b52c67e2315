use std::path::PathBuf;

use coprompt::corpus::LabelPolicy;
use coprompt::model::{CoPredictionModel, ModelConfig, TinyBackboneConfig};
use coprompt::presets::Preset;
use coprompt::trainer::{train_with_progress, DevMetric, EpochRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    default_out_dir, json, load_dataset, load_vocab, map, merge_maps, prepare_out_dir, usage_on_invalid,
};
use crate::args::TrainArgs;
use crate::config::{lookup_as, resolve, FileSettings, Flags};
use crate::manifest::Recorder;
use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.csv";
const TINY: &str = "tiny";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSettings {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub vocab: PathBuf,
    pub out_dir: PathBuf,
    pub preset: Preset,
    pub backbone: String,
    pub n_soft: usize,
    #[serde(flatten)]
    pub training: TrainConfig,
    #[serde(flatten)]
    pub architecture: TinyBackboneConfig,
}

impl TrainSettings {
    pub fn validate(&self) -> CliResult<()> {
        if self.backbone != TINY {
            return Err(CliError::usage(format!(
                "invalid backbone: `{}` is not available (only `{TINY}`)",
                self.backbone
            )));
        }
        self.training.validate().map_err(usage_on_invalid)?;
        self.architecture.validate().map_err(usage_on_invalid)
    }

    /// Settings stored inside the checkpoint: everything except file locations.
    fn snapshot(&self) -> Value {
        let mut v = json(self);
        if let Value::Object(m) = &mut v {
            for k in ["train", "dev", "vocab", "out_dir"] {
                m.remove(k);
            }
        }
        v
    }
}

fn resolve_settings(args: TrainArgs) -> CliResult<TrainSettings> {
    let file = FileSettings::load(args.common.config.as_deref(), "train")?;
    let mut flags = Flags::default();
    flags.set("train", args.train);
    flags.set("dev", args.dev);
    flags.set("vocab", args.vocab);
    flags.set("out_dir", args.common.out_dir);
    flags.set("seed", args.common.seed);
    flags.set("preset", args.preset);
    flags.set_if("baseline_mode", args.baseline, true);
    flags.set_if("backbone", args.tiny_backbone, TINY);
    flags.set("max_epochs", args.epochs);
    flags.set("patience", args.patience);
    flags.set("batch_size", args.batch_size);
    flags.set("learning_rate", args.learning_rate);
    flags.set("weight_decay", args.weight_decay);
    flags.set("grad_clip", args.grad_clip);
    flags.set("embedding_dropout", args.dropout);
    flags.set("warmup_ratio", args.warmup_ratio);
    flags.set("gamma_min", args.gamma_min);
    flags.set("gamma_decay", args.gamma_decay);
    flags.set("dev_metric", args.dev_metric.map(DevMetric::from));
    flags.set("n_soft", args.n_soft);
    flags.set("hidden_dim", args.hidden_dim);
    flags.set("n_layers", args.n_layers);
    flags.set("n_heads", args.n_heads);
    flags.set("ffn_dim", args.ffn_dim);
    flags.set("max_len", args.max_len);

    let preset = lookup_as::<Preset>(&flags, &file, "preset")?.unwrap_or(Preset::Tiny);
    let defaults = merge_maps([
        json(preset.train_config()),
        json(preset.backbone_config()),
        map([
            ("train", Value::Null),
            ("dev", Value::Null),
            ("vocab", Value::Null),
            ("out_dir", default_out_dir("train")),
            ("preset", json(preset)),
            ("backbone", json(TINY)),
            ("n_soft", json(ModelConfig::default().n_soft)),
        ]),
    ]);
    let settings: TrainSettings = resolve("train", defaults, &["train", "dev", "vocab"], &file, &flags)?;
    settings.validate()?;
    Ok(settings)
}

pub fn run(args: TrainArgs, argv: &[String]) -> CliResult<()> {
    let settings = resolve_settings(args)?;
    execute(&settings, argv)
}

fn epoch_line(r: &EpochRecord) -> String {
    let div = r
        .divergence_rate
        .map(|d| format!("{d:.4}"))
        .unwrap_or_else(|| "-".to_string());
    format!(
        "epoch {:>3}  gamma {:.4}  loss {:.5}  divergence {div}  dev macro-F1 {:.4}  micro-F1 {:.4}",
        r.epoch, r.gamma, r.train_loss, r.dev_macro_f1, r.dev_micro_f1
    )
}

pub fn execute(s: &TrainSettings, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::start("train", argv, Some(s.training.seed), s);
    rec.input("train", &s.train)?;
    rec.input("dev", &s.dev)?;
    rec.input("vocab", &s.vocab)?;

    let vocab = load_vocab(&s.vocab)?;
    let train_set = load_dataset(&s.train, &vocab, LabelPolicy::RequireLabels)?;
    let dev_set = load_dataset(&s.dev, &vocab, LabelPolicy::RequireLabels)?;
    let model_config = ModelConfig {
        n_soft: s.n_soft,
        style: s.training.style(),
    };
    let model = CoPredictionModel::tiny_for(
        &[&train_set, &dev_set],
        s.architecture.clone(),
        model_config,
        s.training.seed,
    )
    .map_err(CliError::runtime)?;
    println!(
        "training {} on {} examples ({} dev, {} types), preset {}",
        if s.training.baseline_mode {
            "standard-prompt baseline"
        } else {
            "co-prediction model"
        },
        train_set.len(),
        dev_set.len(),
        vocab.len(),
        s.preset
    );
    let outcome = train_with_progress(model, &train_set, &dev_set, &s.training, |r| {
        println!("{}", epoch_line(r))
    })
    .map_err(CliError::runtime)?;
    let best = outcome.best();
    println!(
        "best epoch {} (dev macro-F1 {:.4})",
        best.epoch, best.dev_macro_f1
    );

    prepare_out_dir(&s.out_dir)?;
    let ckpt = s.out_dir.join(CHECKPOINT_FILE);
    outcome
        .model
        .save(&ckpt, s.snapshot())
        .map_err(CliError::runtime)?;
    rec.output("checkpoint", &ckpt)?;
    let trace = s.out_dir.join(TRACE_FILE);
    outcome.trace.save_csv(&trace).map_err(CliError::runtime)?;
    rec.output("trace", &trace)?;
    let manifest = rec.finish(&s.out_dir)?;
    println!(
        "wrote {}, {}, {}",
        ckpt.display(),
        trace.display(),
        manifest.display()
    );
    Ok(())
}
