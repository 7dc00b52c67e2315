//! Fine-tuning with the divergence-weighted co-prediction loss.
//!
//! Each epoch trains with loss weight `gamma_schedule(epoch)` on divergent
//! labels, then measures the training-set divergence rate and dev F1 in
//! evaluation mode. The parameters from the best dev epoch are returned.

mod loss;
mod optim;
mod schedule;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict_labels, MetricReport};
use crate::model::autograd::Gradients;
use crate::model::{Backbone, CoPredictionModel, CoPredictionScores, Dropout, EncodedPrompt};
use crate::prompt::PromptStyle;

pub use loss::{
    bce, bce_with_logits, coprediction_loss, coprediction_loss_from_logits, detect_divergent, is_divergent,
    weighted_loss_from_logits, LossTerms,
};
pub use optim::{clip_grad_norm, AdamW};
pub use schedule::{gamma_schedule, learning_rate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMetric {
    #[default]
    MacroF1,
    MicroF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub warmup_ratio: f64,
    pub embedding_dropout: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub gamma_min: f64,
    pub gamma_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub baseline_mode: bool,
    pub dev_metric: DevMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 3e-6,
            adam_epsilon: 1e-8,
            warmup_ratio: 0.0,
            embedding_dropout: 0.2,
            weight_decay: 0.01,
            grad_clip: 0.1,
            gamma_min: 0.1,
            gamma_decay: 0.5,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            baseline_mode: false,
            dev_metric: DevMetric::MacroF1,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} must be positive")))
    }
}

fn unit(field: &'static str, v: f64, lo_open: bool, hi_open: bool) -> Result<()> {
    let lo = if lo_open { v > 0.0 } else { v >= 0.0 };
    let hi = if hi_open { v < 1.0 } else { v <= 1.0 };
    if lo && hi {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} is out of range")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        positive("learning_rate", self.learning_rate)?;
        positive("adam_epsilon", self.adam_epsilon)?;
        unit("warmup_ratio", self.warmup_ratio, false, false)?;
        unit("embedding_dropout", self.embedding_dropout, false, true)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be non-negative"));
        }
        positive("grad_clip", self.grad_clip)?;
        unit("gamma_min", self.gamma_min, true, false)?;
        unit("gamma_decay", self.gamma_decay, true, false)?;
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        Ok(())
    }

    pub fn gamma(&self, epoch: usize) -> f64 {
        gamma_schedule(epoch, self.gamma_min, self.gamma_decay)
    }

    pub fn style(&self) -> PromptStyle {
        if self.baseline_mode {
            PromptStyle::Standard
        } else {
            PromptStyle::CoPrediction
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub gamma: f64,
    /// Fraction of (example, label) pairs with divergent co-predictions on
    /// the training set; absent for the single-mask baseline.
    pub divergence_rate: Option<f64>,
    pub dev_macro_f1: f64,
    pub dev_micro_f1: f64,
    pub train_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTrace {
    pub records: Vec<EpochRecord>,
    pub dev_metric: DevMetric,
}

impl DivergenceTrace {
    pub fn dev_score(&self, r: &EpochRecord) -> f64 {
        match self.dev_metric {
            DevMetric::MacroF1 => r.dev_macro_f1,
            DevMetric::MicroF1 => r.dev_micro_f1,
        }
    }

    /// First epoch reaching the maximum dev score.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().fold(None, |best, r| match best {
            Some(b) if self.dev_score(b) >= self.dev_score(r) => Some(b),
            _ => Some(r),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<trace>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn read_csv<R: Read>(r: R, dev_metric: DevMetric) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        for rec in &records {
            if let Some(rate) = rec.divergence_rate {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::invalid("divergence_rate", format!("{rate} not in [0, 1]")));
                }
            }
        }
        Ok(Self { records, dev_metric })
    }

    pub fn load_csv(path: impl AsRef<Path>, dev_metric: DevMetric) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, dev_metric)
    }
}

pub struct TrainOutcome<B: Backbone> {
    /// The model restored to its best dev epoch.
    pub model: CoPredictionModel<B>,
    pub trace: DivergenceTrace,
}

impl<B: Backbone> TrainOutcome<B> {
    pub fn best(&self) -> &EpochRecord {
        self.trace.best().expect("at least one epoch")
    }
}

/// SplitMix64 finalizer over a seed and two stream indices.
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of divergent (example, label) pairs.
pub fn divergence_rate(scores: &[CoPredictionScores]) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for s in scores {
        hits += detect_divergent(s).iter().filter(|&&d| d).count();
        total += s.len();
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Dev metrics from PMASK predictions.
pub fn evaluate_model<B: Backbone>(model: &CoPredictionModel<B>, dataset: &Dataset) -> Result<MetricReport> {
    let scores = model.score_all(&dataset.examples)?;
    let preds: Vec<LabelSet> = scores.iter().map(|s| predict_labels(s, 0.5)).collect();
    evaluate(&preds, &dataset.label_sets())
}

struct ExampleStep {
    grads: Gradients,
    loss: f64,
}

fn example_step<B: Backbone>(
    model: &CoPredictionModel<B>,
    enc: &EncodedPrompt,
    gold: &LabelSet,
    gamma: f64,
    dropout_p: f64,
    seed: u64,
) -> Result<ExampleStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropout = Dropout {
        p: dropout_p,
        rng: &mut rng,
    };
    let fwd = model.forward(enc, Some(&mut dropout));
    let terms = coprediction_loss_from_logits(&fwd.logits(), gold, gamma)?;
    let mut grads = Gradients::new(model.params());
    fwd.backward(&terms.d_pos, terms.d_neg.as_deref(), &mut grads);
    Ok(ExampleStep {
        grads,
        loss: terms.loss,
    })
}

/// Trains `model` on `train_set`, selecting the epoch with the best dev score.
pub fn train<B: Backbone>(
    model: CoPredictionModel<B>,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome<B>> {
    train_with_progress(model, train_set, dev_set, config, |_| {})
}

/// [`train`], calling `on_epoch` after each epoch is evaluated.
pub fn train_with_progress<B: Backbone>(
    mut model: CoPredictionModel<B>,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<B>> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::invalid(
            "dataset",
            "training and dev splits must be non-empty",
        ));
    }
    model.check_vocabulary(train_set)?;
    model.check_vocabulary(dev_set)?;
    if model.style() != config.style() {
        return Err(Error::invalid(
            "baseline_mode",
            format!(
                "model uses the {:?} prompt but the config asks for {:?}",
                model.style(),
                config.style()
            ),
        ));
    }
    let encoded: Vec<EncodedPrompt> = train_set
        .examples
        .iter()
        .map(|ex| model.encode(ex))
        .collect::<Result<_>>()?;
    let gold = train_set.label_sets();
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.max_epochs;
    let warmup = (config.warmup_ratio * total_steps as f64).round() as usize;
    let mut optim = AdamW::new(model.params(), config.adam_epsilon, config.weight_decay);
    let mut trace = DivergenceTrace {
        records: Vec::new(),
        dev_metric: config.dev_metric,
    };
    let mut best_params = model.params().clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.max_epochs {
        let gamma = if config.baseline_mode {
            1.0
        } else {
            config.gamma(epoch)
        };
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(config.batch_size) {
            let m = &model;
            let results: Vec<ExampleStep> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(config.seed, epoch as u64, i as u64);
                    example_step(m, &encoded[i], &gold[i], gamma, config.embedding_dropout, seed)
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::new(model.params());
            let mut batch_loss = 0.0;
            for (r, &i) in results.iter().zip(batch) {
                if !r.loss.is_finite() {
                    return Err(Error::TrainingAborted(format!(
                        "non-finite loss {} on example `{}` at epoch {epoch}, step {step}",
                        r.loss, train_set.examples[i].id
                    )));
                }
                grads.accumulate(&r.grads);
                batch_loss += r.loss;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() {
                return Err(Error::TrainingAborted(format!(
                    "non-finite gradient at epoch {epoch}, step {step}"
                )));
            }
            clip_grad_norm(&mut grads, config.grad_clip);
            let lr = learning_rate(step, total_steps, warmup, config.learning_rate);
            optim.step(model.params_mut(), &grads, lr);
            epoch_loss += batch_loss;
            step += 1;
        }

        let divergence = if config.baseline_mode {
            None
        } else {
            Some(divergence_rate(&model.score_all(&train_set.examples)?))
        };
        let dev = evaluate_model(&model, dev_set)?;
        let record = EpochRecord {
            epoch,
            gamma,
            divergence_rate: divergence,
            dev_macro_f1: dev.macro_f1,
            dev_micro_f1: dev.micro_f1,
            train_loss: epoch_loss / train_set.len() as f64,
        };
        let score = trace.dev_score(&record);
        on_epoch(&record);
        trace.records.push(record);
        if score > best_score {
            best_score = score;
            best_params = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    *model.params_mut() = best_params;
    Ok(TrainOutcome { model, trace })
}
