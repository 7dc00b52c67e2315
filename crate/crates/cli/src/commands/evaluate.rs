use std::path::PathBuf;

use coprompt::corpus::LabelPolicy;
use coprompt::eval::evaluate_datasets;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{default_out_dir, load_dataset, load_vocab, map, prepare_out_dir, write_text};
use crate::args::EvaluateArgs;
use crate::config::{resolve, FileSettings, Flags};
use crate::manifest::Recorder;
use crate::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluateSettings {
    pub pred: PathBuf,
    pub gold: PathBuf,
    pub vocab: PathBuf,
    pub out_dir: PathBuf,
}

pub fn run(args: EvaluateArgs, argv: &[String]) -> CliResult<()> {
    let file = FileSettings::load(args.common.config.as_deref(), "evaluate")?;
    let mut flags = Flags::default();
    flags.set("pred", args.pred);
    flags.set("gold", args.gold);
    flags.set("vocab", args.vocab);
    flags.set("out_dir", args.common.out_dir);
    let defaults = map([
        ("pred", Value::Null),
        ("gold", Value::Null),
        ("vocab", Value::Null),
        ("out_dir", default_out_dir("evaluate")),
    ]);
    let settings: EvaluateSettings =
        resolve("evaluate", defaults, &["pred", "gold", "vocab"], &file, &flags)?;
    execute(&settings, argv)
}

pub fn execute(s: &EvaluateSettings, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::start("evaluate", argv, None, s);
    rec.input("pred", &s.pred)?;
    rec.input("gold", &s.gold)?;
    rec.input("vocab", &s.vocab)?;
    let vocab = load_vocab(&s.vocab)?;
    let pred = load_dataset(&s.pred, &vocab, LabelPolicy::AllowEmpty)?;
    let gold = load_dataset(&s.gold, &vocab, LabelPolicy::AllowEmpty)?;
    let report = evaluate_datasets(&pred, &gold).map_err(CliError::runtime)?;
    println!("{report}");

    prepare_out_dir(&s.out_dir)?;
    let path = s.out_dir.join(METRICS_FILE);
    let text = serde_json::to_string_pretty(&report.to_flat()).map_err(CliError::runtime)?;
    write_text(&path, &(text + "\n"))?;
    rec.output("metrics", &path)?;
    rec.finish(&s.out_dir)?;
    Ok(())
}
