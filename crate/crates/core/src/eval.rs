//! Set-based multi-label metrics: strict accuracy plus example-averaged
//! (macro) and corpus-aggregated (micro) precision, recall and F1.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::model::CoPredictionScores;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub strict_accuracy: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    pub n_examples: usize,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `hits / total`, with an empty denominator scoring 1 only if the other side is empty too.
fn ratio(hits: usize, total: usize, other: usize) -> f64 {
    if total == 0 {
        if other == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        hits as f64 / total as f64
    }
}

pub fn evaluate(predictions: &[LabelSet], gold: &[LabelSet]) -> Result<MetricReport> {
    if predictions.len() != gold.len() {
        return Err(Error::invalid(
            "predictions",
            format!(
                "{} predictions for {} gold label sets",
                predictions.len(),
                gold.len()
            ),
        ));
    }
    if gold.is_empty() {
        return Err(Error::invalid("gold", "no examples to evaluate"));
    }
    let n = gold.len();
    let (mut exact, mut sum_p, mut sum_r) = (0usize, 0.0, 0.0);
    let (mut hits, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(gold) {
        let h = p.intersection(g).count();
        exact += usize::from(p == g);
        sum_p += ratio(h, p.len(), g.len());
        sum_r += ratio(h, g.len(), p.len());
        hits += h;
        n_pred += p.len();
        n_gold += g.len();
    }
    let macro_p = sum_p / n as f64;
    let macro_r = sum_r / n as f64;
    let micro_p = ratio(hits, n_pred, n_gold);
    let micro_r = ratio(hits, n_gold, n_pred);
    Ok(MetricReport {
        strict_accuracy: exact as f64 / n as f64,
        macro_p,
        macro_r,
        macro_f1: f1(macro_p, macro_r),
        micro_p,
        micro_r,
        micro_f1: f1(micro_p, micro_r),
        n_examples: n,
    })
}

/// Evaluates two aligned datasets over the same type vocabulary.
pub fn evaluate_datasets(predictions: &Dataset, gold: &Dataset) -> Result<MetricReport> {
    if predictions.vocabulary != gold.vocabulary {
        return Err(Error::VocabularyMismatch(format!(
            "`{}` and `{}` use different type vocabularies",
            predictions.split_name, gold.split_name
        )));
    }
    if predictions.len() != gold.len() {
        return Err(Error::invalid(
            "predictions",
            format!("{} examples vs {} gold examples", predictions.len(), gold.len()),
        ));
    }
    if let Some((p, g)) = predictions
        .examples
        .iter()
        .zip(&gold.examples)
        .find(|(p, g)| p.id != g.id)
    {
        return Err(Error::invalid(
            "predictions",
            format!("example `{}` is aligned with gold example `{}`", p.id, g.id),
        ));
    }
    evaluate(&predictions.label_sets(), &gold.label_sets())
}

/// Labels whose PMASK score reaches `threshold`; the arg-max label if none does.
pub fn predict_labels(scores: &CoPredictionScores, threshold: f64) -> LabelSet {
    let mut out: LabelSet = (0..scores.len())
        .filter(|&y| scores.p_pos[y] >= threshold)
        .collect();
    if out.is_empty() {
        let best = (0..scores.len()).fold(None, |best: Option<usize>, y| match best {
            Some(b) if scores.p_pos[b] >= scores.p_pos[y] => Some(b),
            _ => Some(y),
        });
        out.extend(best);
    }
    out
}

impl MetricReport {
    /// Flat `key → value` view, in a fixed order.
    pub fn to_flat(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("strict_accuracy", self.strict_accuracy),
            ("macro_p", self.macro_p),
            ("macro_r", self.macro_r),
            ("macro_f1", self.macro_f1),
            ("micro_p", self.micro_p),
            ("micro_r", self.micro_r),
            ("micro_f1", self.micro_f1),
            ("n_examples", self.n_examples as f64),
        ])
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>8} {:>8} {:>8}", "", "P", "R", "F1")?;
        writeln!(f, "{:<8} {:>8.4}", "Acc", self.strict_accuracy)?;
        writeln!(
            f,
            "{:<8} {:>8.4} {:>8.4} {:>8.4}",
            "Macro", self.macro_p, self.macro_r, self.macro_f1
        )?;
        writeln!(
            f,
            "{:<8} {:>8.4} {:>8.4} {:>8.4}",
            "Micro", self.micro_p, self.micro_r, self.micro_f1
        )?;
        write!(f, "{:<8} {:>8}", "N", self.n_examples)
    }
}
