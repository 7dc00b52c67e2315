use std::path::PathBuf;

use coprompt::corpus::synth::{generate, SynthConfig};
use coprompt::corpus::{inject_noise, NoiseSpec};
use serde::{Deserialize, Serialize};

use super::{default_out_dir, json, map, prepare_out_dir, save_dataset, usage_on_invalid};
use crate::args::SynthArgs;
use crate::config::{resolve, FileSettings, Flags};
use crate::manifest::Recorder;
use crate::{CliError, CliResult};

pub const VOCAB_FILE: &str = "types.txt";
pub const NOISY_FILE: &str = "train.noisy.jsonl";
pub const TRUTH_FILE: &str = "train.truth.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";

/// Offset between the corpus seed and the noise seed.
pub const NOISE_SEED_OFFSET: u64 = 1000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSettings {
    pub types: usize,
    pub examples: usize,
    pub dev_examples: usize,
    pub swap: f64,
    pub drop: f64,
    pub seed: u64,
    pub cues_per_type: usize,
    pub names_per_type: usize,
    pub out_dir: PathBuf,
}

impl SynthSettings {
    fn corpus(&self) -> SynthConfig {
        SynthConfig {
            n_types: self.types,
            n_train: self.examples,
            n_dev: self.dev_examples,
            seed: self.seed,
            cues_per_type: self.cues_per_type,
            names_per_type: self.names_per_type,
        }
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            inaccurate_rate: self.swap,
            drop_rate: self.drop,
            seed: self.seed.wrapping_add(NOISE_SEED_OFFSET),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.noise().validate().map_err(usage_on_invalid)?;
        if self.types == 0 || self.examples == 0 {
            return Err(CliError::usage("invalid types/examples: must be at least 1"));
        }
        Ok(())
    }
}

pub fn run(args: SynthArgs, argv: &[String]) -> CliResult<()> {
    let file = FileSettings::load(args.common.config.as_deref(), "synth")?;
    let mut flags = Flags::default();
    flags.set("types", args.types);
    flags.set("examples", args.examples);
    flags.set("dev_examples", args.dev_examples);
    flags.set("swap", args.swap);
    flags.set("drop", args.drop);
    flags.set("seed", args.common.seed);
    flags.set("out_dir", args.common.out_dir);
    let d = SynthConfig::default();
    let defaults = map([
        ("types", json(d.n_types)),
        ("examples", json(d.n_train)),
        ("dev_examples", json(d.n_dev)),
        ("swap", json(0.3)),
        ("drop", json(0.2)),
        ("seed", json(d.seed)),
        ("cues_per_type", json(d.cues_per_type)),
        ("names_per_type", json(d.names_per_type)),
        ("out_dir", default_out_dir("synth")),
    ]);
    let settings: SynthSettings = resolve("synth", defaults, &[], &file, &flags)?;
    settings.validate()?;
    execute(&settings, argv)
}

pub fn execute(s: &SynthSettings, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::start("synth", argv, Some(s.seed), s);
    let corpus = generate(&s.corpus()).map_err(usage_on_invalid)?;
    let (noisy, truth) = inject_noise(&corpus.train, &s.noise()).map_err(CliError::runtime)?;

    prepare_out_dir(&s.out_dir)?;
    let out = |name: &str| s.out_dir.join(name);
    corpus
        .vocabulary
        .save(out(VOCAB_FILE))
        .map_err(CliError::runtime)?;
    rec.output("vocab", &out(VOCAB_FILE))?;
    save_dataset(&noisy, &out(NOISY_FILE))?;
    rec.output("noisy", &out(NOISY_FILE))?;
    save_dataset(&truth, &out(TRUTH_FILE))?;
    rec.output("ground_truth", &out(TRUTH_FILE))?;
    save_dataset(&corpus.dev, &out(DEV_FILE))?;
    rec.output("dev", &out(DEV_FILE))?;
    rec.finish(&s.out_dir)?;
    println!(
        "{} types, {} train ({} with corrupted labels), {} dev -> {}",
        corpus.vocabulary.len(),
        noisy.len(),
        noisy
            .examples
            .iter()
            .zip(&truth.examples)
            .filter(|(n, t)| n.labels != t.labels)
            .count(),
        corpus.dev.len(),
        s.out_dir.display()
    );
    Ok(())
}
