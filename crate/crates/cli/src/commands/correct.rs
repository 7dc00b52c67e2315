use std::path::{Path, PathBuf};
use std::sync::Arc;

use coprompt::corpus::LabelPolicy;
use coprompt::corrector::{correct_dataset, CorrectionConfig, RecallRule};
use coprompt::model::{Checkpoint, CoPredictionModel};
use coprompt::presets::{LabelSource, Preset};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    default_out_dir, json, load_dataset, load_vocab, map, merge_maps, prepare_out_dir, save_dataset,
    usage_on_invalid, write_text,
};
use crate::args::CorrectArgs;
use crate::config::{lookup_as, resolve, FileSettings, Flags};
use crate::manifest::Recorder;
use crate::{CliError, CliResult};

pub const CORRECTED_FILE: &str = "corrected.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const HISTOGRAM_FILE: &str = "delta_histogram.csv";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectSettings {
    pub model: PathBuf,
    pub data: PathBuf,
    /// Falls back to the checkpoint's vocabulary.
    pub vocab: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub preset: Preset,
    pub source: LabelSource,
    #[serde(flatten)]
    pub correction: CorrectionConfig,
}

impl CorrectSettings {
    pub fn validate(&self) -> CliResult<()> {
        self.correction.validate().map_err(usage_on_invalid)
    }
}

fn checkpoint_preset(path: &Path) -> CliResult<Option<Preset>> {
    let ck = Checkpoint::load(path).map_err(CliError::runtime)?;
    Ok(ck
        .config
        .get("preset")
        .and_then(|v| serde_json::from_value(v.clone()).ok()))
}

fn resolve_settings(args: CorrectArgs) -> CliResult<CorrectSettings> {
    let file = FileSettings::load(args.common.config.as_deref(), "correct")?;
    let mut flags = Flags::default();
    flags.set("model", args.model);
    flags.set("data", args.data);
    flags.set("vocab", args.vocab);
    flags.set("out_dir", args.common.out_dir);
    flags.set("preset", args.preset);
    flags.set("source", args.source);
    flags.set("epsilon", args.epsilon);
    flags.set("positive_threshold", args.threshold);
    flags.set("recall_rule", args.recall_rule.map(RecallRule::from));
    flags.set_if("protect_gold", args.no_protect_gold, false);
    if let Some(seed) = args.common.seed {
        eprintln!("note: correct is deterministic; --seed {seed} has no effect");
    }

    let model: Option<PathBuf> = lookup_as(&flags, &file, "model")?;
    let model = model.ok_or_else(|| CliError::usage("missing required setting `model` (flag --model)"))?;
    let preset = match lookup_as::<Preset>(&flags, &file, "preset")? {
        Some(p) => p,
        None => checkpoint_preset(&model)?.unwrap_or(Preset::Tiny),
    };
    let source = lookup_as::<LabelSource>(&flags, &file, "source")?.unwrap_or(preset.native_source());
    let epsilon = preset.epsilon(source);
    if epsilon.is_none() && lookup_as::<f64>(&flags, &file, "epsilon")?.is_none() {
        return Err(CliError::usage(format!(
            "invalid epsilon: preset `{preset}` defines no margin for {source:?} labels; pass --epsilon"
        )));
    }
    let defaults = merge_maps([
        json(CorrectionConfig::default()),
        map([
            ("model", json(&model)),
            ("data", Value::Null),
            ("vocab", Value::Null),
            ("out_dir", default_out_dir("correct")),
            ("preset", json(preset)),
            ("source", json(source)),
            ("epsilon", json(epsilon)),
        ]),
    ]);
    let settings: CorrectSettings = resolve("correct", defaults, &["data"], &file, &flags)?;
    settings.validate()?;
    Ok(settings)
}

pub fn run(args: CorrectArgs, argv: &[String]) -> CliResult<()> {
    let settings = resolve_settings(args)?;
    execute(&settings, argv)
}

pub fn execute(s: &CorrectSettings, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::start("correct", argv, None, s);
    rec.input("model", &s.model)?;
    rec.input("data", &s.data)?;
    let (model, _) = CoPredictionModel::load(&s.model).map_err(CliError::runtime)?;
    let vocab = match &s.vocab {
        Some(path) => {
            rec.input("vocab", path)?;
            load_vocab(path)?
        }
        None => Arc::clone(model.vocabulary()),
    };
    let data = load_dataset(&s.data, &vocab, LabelPolicy::AllowEmpty)?;
    let (corrected, report) = correct_dataset(&model, &data, &s.correction).map_err(CliError::runtime)?;

    prepare_out_dir(&s.out_dir)?;
    let out = |name: &str| s.out_dir.join(name);
    save_dataset(&corrected, &out(CORRECTED_FILE))?;
    rec.output("corrected", &out(CORRECTED_FILE))?;
    report.save_json(out(REPORT_FILE)).map_err(CliError::runtime)?;
    rec.output("report", &out(REPORT_FILE))?;
    let summary = format!("{report}\n");
    write_text(&out(SUMMARY_FILE), &summary)?;
    rec.output("summary", &out(SUMMARY_FILE))?;
    let hist = std::fs::File::create(out(HISTOGRAM_FILE)).map_err(CliError::runtime)?;
    report.write_histogram_csv(hist).map_err(CliError::runtime)?;
    rec.output("delta_histogram", &out(HISTOGRAM_FILE))?;
    rec.finish(&s.out_dir)?;
    print!("{summary}");
    Ok(())
}
