use std::path::PathBuf;

use clap::ValueEnum;
use coprompt::annotator::{
    annotate, filter_candidates, AnnotationStatus, AnnotatorConfig, CompletionClient, HttpClient, MockClient,
};
use coprompt::corpus::LabelPolicy;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    default_out_dir, json, load_dataset, load_vocab, map, merge_maps, prepare_out_dir, save_dataset,
    usage_on_invalid,
};
use crate::args::AnnotateArgs;
use crate::config::{lookup_as, resolve, FileSettings, Flags};
use crate::manifest::Recorder;
use crate::{CliError, CliResult};

pub const SAMPLE_FILE: &str = "sample.jsonl";
pub const ANNOTATED_FILE: &str = "annotated.jsonl";
pub const LOG_FILE: &str = "annotation_log.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mock,
    Http,
}

/// Frequency cutoff and sample size defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatePreset {
    Ontonotes,
    Wiki,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnotateSettings {
    pub data: PathBuf,
    pub vocab: PathBuf,
    pub out_dir: PathBuf,
    pub preset: AnnotatePreset,
    pub backend: Backend,
    pub mock_response: Option<String>,
    #[serde(flatten)]
    pub annotator: AnnotatorConfig,
}

impl AnnotateSettings {
    pub fn validate(&self) -> CliResult<()> {
        if self.backend == Backend::Mock && self.mock_response.is_none() {
            return Err(CliError::usage(
                "invalid mock_response: the mock backend needs --mock-response",
            ));
        }
        if !self.annotator.rate_limit.is_finite() {
            return Err(CliError::usage("invalid rate_limit: must be finite"));
        }
        self.annotator.validate().map_err(usage_on_invalid)
    }

    fn client(&self) -> CliResult<Box<dyn CompletionClient>> {
        match self.backend {
            Backend::Mock => {
                let text = self.mock_response.clone().unwrap_or_default();
                Ok(Box::new(MockClient::new(move |_| Ok(text.clone()))))
            }
            Backend::Http => {
                let a = &self.annotator;
                let client =
                    HttpClient::from_env(&a.endpoint, &a.model, &a.api_key_env).map_err(CliError::runtime)?;
                Ok(Box::new(client))
            }
        }
    }
}

fn resolve_settings(args: AnnotateArgs) -> CliResult<AnnotateSettings> {
    let file = FileSettings::load(args.common.config.as_deref(), "annotate")?;
    let mut flags = Flags::default();
    flags.set("data", args.data);
    flags.set("vocab", args.vocab);
    flags.set("out_dir", args.common.out_dir);
    flags.set("seed", args.common.seed);
    flags.set("preset", args.preset);
    flags.set("backend", args.backend);
    flags.set("mock_response", args.mock_response);
    flags.set("min_frequency", args.min_frequency);
    flags.set("sample_size", args.sample_size.map(|k| (k > 0).then_some(k)));
    flags.set("temperature", args.temperature);
    flags.set("top_p", args.top_p);
    flags.set("endpoint", args.endpoint);
    flags.set("model", args.model);
    flags.set("api_key_env", args.api_key_env);
    if let Some(path) = &args.template {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        flags.set("prompt_template", Some(text));
    }
    flags.set("rate_limit", args.rate_limit);
    flags.set("max_retries", args.max_retries);
    flags.set("retry_backoff_ms", args.retry_backoff_ms);

    let preset = lookup_as::<AnnotatePreset>(&flags, &file, "preset")?.unwrap_or(AnnotatePreset::Ontonotes);
    let base = match preset {
        AnnotatePreset::Ontonotes => AnnotatorConfig::ontonotes(),
        AnnotatePreset::Wiki => AnnotatorConfig::wiki(),
    };
    let defaults = merge_maps([
        json(base),
        map([
            ("data", Value::Null),
            ("vocab", Value::Null),
            ("out_dir", default_out_dir("annotate")),
            ("preset", json(preset)),
            ("backend", json(Backend::Http)),
            ("mock_response", Value::Null),
        ]),
    ]);
    let settings: AnnotateSettings = resolve("annotate", defaults, &["data", "vocab"], &file, &flags)?;
    settings.validate()?;
    Ok(settings)
}

pub fn run(args: AnnotateArgs, argv: &[String]) -> CliResult<()> {
    let settings = resolve_settings(args)?;
    execute(&settings, argv)
}

pub fn execute(s: &AnnotateSettings, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::start("annotate", argv, Some(s.annotator.seed), s);
    rec.input("data", &s.data)?;
    rec.input("vocab", &s.vocab)?;
    let client = s.client()?;
    let vocab = load_vocab(&s.vocab)?;
    let data = load_dataset(&s.data, &vocab, LabelPolicy::AllowEmpty)?;
    let sample = filter_candidates(&data, &s.annotator).map_err(CliError::runtime)?;
    println!(
        "annotating {} of {} examples (mentions seen at least {} times)",
        sample.len(),
        data.len(),
        s.annotator.min_frequency
    );
    let result = annotate(&sample, &s.annotator, client.as_ref()).map_err(CliError::runtime)?;

    prepare_out_dir(&s.out_dir)?;
    let out = |name: &str| s.out_dir.join(name);
    save_dataset(&sample, &out(SAMPLE_FILE))?;
    rec.output("sample", &out(SAMPLE_FILE))?;
    save_dataset(&result.dataset, &out(ANNOTATED_FILE))?;
    rec.output("annotated", &out(ANNOTATED_FILE))?;
    result.save_log(out(LOG_FILE)).map_err(CliError::runtime)?;
    rec.output("log", &out(LOG_FILE))?;
    rec.finish(&s.out_dir)?;
    println!(
        "ok {}  failed {}  empty {}",
        result.count(AnnotationStatus::Ok),
        result.count(AnnotationStatus::Failed),
        result.count(AnnotationStatus::Empty)
    );
    Ok(())
}
