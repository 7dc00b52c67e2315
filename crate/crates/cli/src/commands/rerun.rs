use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde_json::Value;

use super::{annotate, correct, evaluate, plot, synth, train};
use crate::args::RerunArgs;
use crate::manifest::{hash_file, RunManifest};
use crate::{CliError, CliResult};

fn settings<T: DeserializeOwned>(config: &Value, out_dir: &Option<PathBuf>) -> CliResult<T> {
    let mut config = config.clone();
    if let (Some(dir), Value::Object(m)) = (out_dir, &mut config) {
        m.insert(
            "out_dir".into(),
            serde_json::to_value(dir).expect("path serializes"),
        );
    }
    serde_json::from_value(config).map_err(|e| CliError::usage(format!("manifest config: {e}")))
}

pub fn run(args: RerunArgs, argv: &[String]) -> CliResult<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    for input in &manifest.inputs {
        let now = hash_file(&input.path)?;
        if now != input.hash {
            return Err(CliError::runtime(format!(
                "input `{}` ({}) changed since the recorded run: {} != {}",
                input.role,
                input.path.display(),
                now,
                input.hash
            )));
        }
    }
    let (cfg, dir) = (&manifest.config, &args.out_dir);
    match manifest.command.as_str() {
        "train" => {
            let s: train::TrainSettings = settings(cfg, dir)?;
            s.validate()?;
            train::execute(&s, argv)
        }
        "correct" => {
            let s: correct::CorrectSettings = settings(cfg, dir)?;
            s.validate()?;
            correct::execute(&s, argv)
        }
        "evaluate" => {
            let s: evaluate::EvaluateSettings = settings(cfg, dir)?;
            evaluate::execute(&s, argv)
        }
        "annotate" => {
            let s: annotate::AnnotateSettings = settings(cfg, dir)?;
            s.validate()?;
            annotate::execute(&s, argv)
        }
        "synth" => {
            let s: synth::SynthSettings = settings(cfg, dir)?;
            s.validate()?;
            synth::execute(&s, argv)
        }
        "plot" => {
            let s: plot::PlotSettings = settings(cfg, dir)?;
            s.validate()?;
            plot::execute(&s, argv)
        }
        other => Err(CliError::usage(format!(
            "manifest names unknown command `{other}`"
        ))),
    }
}
