#![allow(dead_code)]

use coprompt::corpus::synth::{generate, SynthConfig};
use coprompt::corpus::{inject_noise, Dataset, NoiseSpec};
use coprompt::corrector::{correct_with_scores, CorrectionConfig};
use coprompt::eval::{evaluate_datasets, MetricReport};
use coprompt::model::{CoPredictionModel, CoPredictionScores, ModelConfig, TinyBackboneConfig};
use coprompt::presets::Preset;
use coprompt::trainer::{train, DivergenceTrace, TrainConfig};

pub const SWAP: f64 = 0.3;
pub const DROP: f64 = 0.2;

/// Everything one seeded synthetic run produces.
pub struct BenchRun {
    pub noisy: Dataset,
    pub truth: Dataset,
    pub trace: DivergenceTrace,
    pub scores: Vec<CoPredictionScores>,
}

impl BenchRun {
    pub fn noisy_report(&self) -> MetricReport {
        evaluate_datasets(&self.noisy, &self.truth).unwrap()
    }

    pub fn corrected(&self, epsilon: f64) -> (Dataset, MetricReport) {
        let cfg = CorrectionConfig {
            epsilon,
            ..Default::default()
        };
        let (fixed, _) = correct_with_scores(&self.noisy, &self.scores, &cfg).unwrap();
        let ds = fixed.relabeled(fixed.label_sets(), self.noisy.split_name.clone());
        let report = evaluate_datasets(&ds, &self.truth).unwrap();
        (fixed, report)
    }

    pub fn best_divergence(&self) -> f64 {
        self.trace.best().unwrap().divergence_rate.unwrap()
    }
}

pub fn bench_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..Preset::Tiny.train_config()
    }
}

pub fn run_bench(seed: u64, config: &TrainConfig) -> BenchRun {
    let corpus = generate(&SynthConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    let spec = NoiseSpec::new(SWAP, DROP, seed.wrapping_add(1000)).unwrap();
    let (noisy, truth) = inject_noise(&corpus.train, &spec).unwrap();
    let model = CoPredictionModel::tiny_for(
        &[&noisy, &corpus.dev],
        TinyBackboneConfig::default(),
        ModelConfig::default(),
        seed,
    )
    .unwrap();
    let out = train(model, &noisy, &corpus.dev, config).unwrap();
    let scores = out.model.score_all(&noisy.examples).unwrap();
    BenchRun {
        noisy,
        truth,
        trace: out.trace,
        scores,
    }
}
