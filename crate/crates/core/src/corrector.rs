//! Label correction: recall labels either mask supports, then eliminate
//! candidates whose two mask scores disagree by more than `epsilon`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSet, TypeVocabulary};
use crate::error::{Error, Result};
use crate::model::{Backbone, CoPredictionModel, CoPredictionScores};
use crate::prompt::PromptStyle;

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallRule {
    #[default]
    UnionBothMasks,
    PmaskOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    pub epsilon: f64,
    pub positive_threshold: f64,
    pub recall_rule: RecallRule,
    pub protect_gold: bool,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            positive_threshold: 0.5,
            recall_rule: RecallRule::UnionBothMasks,
            protect_gold: true,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(
                "epsilon",
                format!("{} not in [0, 1]", self.epsilon),
            ));
        }
        if !(self.positive_threshold > 0.0 && self.positive_threshold < 1.0) {
            return Err(Error::invalid(
                "positive_threshold",
                format!("{} not in (0, 1)", self.positive_threshold),
            ));
        }
        Ok(())
    }
}

/// `|p_pos - (1 - p_neg)|`: zero when the masks agree exactly.
pub fn divergence_score(p_pos: f64, p_neg: f64) -> f64 {
    (p_pos - (1.0 - p_neg)).abs()
}

pub fn recall_labels(scores: &CoPredictionScores, gold: &LabelSet, config: &CorrectionConfig) -> LabelSet {
    let thr = config.positive_threshold;
    let mut out = if config.protect_gold {
        gold.clone()
    } else {
        LabelSet::new()
    };
    for y in 0..scores.len() {
        let by_pmask = scores.p_pos[y] >= thr;
        let by_nmask = config.recall_rule == RecallRule::UnionBothMasks && scores.p_neg[y] < thr;
        if by_pmask || by_nmask {
            out.insert(y);
        }
    }
    out
}

pub fn eliminate_labels(
    candidates: &LabelSet,
    scores: &CoPredictionScores,
    config: &CorrectionConfig,
) -> LabelSet {
    candidates
        .iter()
        .copied()
        .filter(|&y| divergence_score(scores.p_pos[y], scores.p_neg[y]) <= config.epsilon)
        .collect()
}

/// Recall then eliminate; an empty result keeps the lowest-δ candidate
/// (lowest id on ties).
pub fn correct_labels(
    scores: &CoPredictionScores,
    gold: &LabelSet,
    config: &CorrectionConfig,
) -> ExampleCorrection {
    let candidates = recall_labels(scores, gold, config);
    let mut kept = eliminate_labels(&candidates, scores, config);
    let delta: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&y| (y, divergence_score(scores.p_pos[y], scores.p_neg[y])))
        .collect();
    let mut floored = false;
    if kept.is_empty() {
        if let Some(&(y, _)) = delta
            .iter()
            .fold(None, |best: Option<&(usize, f64)>, c| match best {
                Some(b) if b.1 <= c.1 => Some(b),
                _ => Some(c),
            })
        {
            kept.insert(y);
            floored = true;
        }
    }
    ExampleCorrection {
        id: String::new(),
        recalled: candidates.difference(gold).copied().collect(),
        eliminated: candidates.difference(&kept).copied().collect(),
        delta,
        original: gold.clone(),
        final_labels: kept,
        floored,
        hierarchy_violations: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleCorrection {
    pub id: String,
    pub original: LabelSet,
    pub recalled: LabelSet,
    pub eliminated: LabelSet,
    pub final_labels: LabelSet,
    /// δ for every candidate label.
    pub delta: Vec<(usize, f64)>,
    /// The floor rule supplied the only label.
    pub floored: bool,
    /// Kept labels whose parent type was eliminated.
    pub hierarchy_violations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub config: CorrectionConfig,
    pub examples: Vec<ExampleCorrection>,
    pub n_examples: usize,
    pub n_changed: usize,
    pub n_recalled: usize,
    pub n_eliminated: usize,
    pub n_floored: usize,
    pub n_hierarchy_violations: usize,
    pub mean_delta: f64,
    /// Counts of candidate δ values over `HISTOGRAM_BINS` equal bins of [0, 1].
    pub delta_histogram: Vec<usize>,
}

fn hierarchy_violations(vocab: &TypeVocabulary, c: &ExampleCorrection) -> Vec<usize> {
    c.final_labels
        .iter()
        .copied()
        .filter(|&y| vocab.parent(y).is_some_and(|p| c.eliminated.contains(&p)))
        .collect()
}

pub fn delta_bin(delta: f64) -> usize {
    ((delta * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

impl CorrectionReport {
    fn from_examples(config: CorrectionConfig, examples: Vec<ExampleCorrection>) -> Self {
        let mut histogram = vec![0; HISTOGRAM_BINS];
        let (mut sum, mut n) = (0.0, 0usize);
        for (_, d) in examples.iter().flat_map(|e| &e.delta) {
            histogram[delta_bin(*d)] += 1;
            sum += d;
            n += 1;
        }
        Self {
            config,
            n_examples: examples.len(),
            n_changed: examples.iter().filter(|e| e.final_labels != e.original).count(),
            n_recalled: examples.iter().map(|e| e.recalled.len()).sum(),
            n_eliminated: examples.iter().map(|e| e.eliminated.len()).sum(),
            n_floored: examples.iter().filter(|e| e.floored).count(),
            n_hierarchy_violations: examples.iter().map(|e| e.hierarchy_violations.len()).sum(),
            mean_delta: if n == 0 { 0.0 } else { sum / n as f64 },
            delta_histogram: histogram,
            examples,
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `(bin_start, bin_end, count)` rows.
    pub fn histogram_rows(&self) -> Vec<(f64, f64, usize)> {
        let w = 1.0 / HISTOGRAM_BINS as f64;
        self.delta_histogram
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as f64 * w, (i + 1) as f64 * w, c))
            .collect()
    }

    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_start", "bin_end", "count"])?;
        for (a, b, c) in self.histogram_rows() {
            out.write_record([format!("{a:.1}"), format!("{b:.1}"), c.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<histogram>", e))
    }
}

impl fmt::Display for CorrectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epsilon              {}", self.config.epsilon)?;
        writeln!(f, "examples             {}", self.n_examples)?;
        writeln!(f, "changed              {}", self.n_changed)?;
        writeln!(f, "labels recalled      {}", self.n_recalled)?;
        writeln!(f, "labels eliminated    {}", self.n_eliminated)?;
        writeln!(f, "floor rule applied   {}", self.n_floored)?;
        writeln!(f, "hierarchy violations {}", self.n_hierarchy_violations)?;
        write!(f, "mean delta           {:.4}", self.mean_delta)
    }
}

/// Scores every example and rewrites its label set.
pub fn correct_with_scores(
    dataset: &Dataset,
    scores: &[CoPredictionScores],
    config: &CorrectionConfig,
) -> Result<(Dataset, CorrectionReport)> {
    config.validate()?;
    if scores.len() != dataset.len() {
        return Err(Error::invalid(
            "scores",
            format!("{} score rows for {} examples", scores.len(), dataset.len()),
        ));
    }
    let t = dataset.vocabulary.len();
    if let Some(s) = scores.iter().find(|s| s.len() != t) {
        return Err(Error::VocabularyMismatch(format!(
            "{} scores for {t} types",
            s.len()
        )));
    }
    let examples: Vec<ExampleCorrection> = dataset
        .examples
        .par_iter()
        .zip(scores)
        .map(|(ex, s)| {
            let mut c = correct_labels(s, &ex.labels, config);
            c.id = ex.id.clone();
            c.hierarchy_violations = hierarchy_violations(&dataset.vocabulary, &c);
            c
        })
        .collect();
    let labels = examples.iter().map(|e| e.final_labels.clone()).collect();
    let corrected = dataset.relabeled(labels, format!("{}-corrected", dataset.split_name));
    Ok((
        corrected,
        CorrectionReport::from_examples(config.clone(), examples),
    ))
}

pub fn correct_dataset<B: Backbone>(
    model: &CoPredictionModel<B>,
    dataset: &Dataset,
    config: &CorrectionConfig,
) -> Result<(Dataset, CorrectionReport)> {
    model.check_vocabulary(dataset)?;
    if model.style() != PromptStyle::CoPrediction {
        return Err(Error::invalid(
            "model",
            "correction needs a co-prediction model with both mask heads",
        ));
    }
    let scores = model.score_all(&dataset.examples)?;
    correct_with_scores(dataset, &scores, config)
}
