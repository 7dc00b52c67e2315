use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::model::{CoPredictionLogits, CoPredictionScores};

/// Both masks on the same side of 0.5 means they disagree: PMASK says
/// "is y" exactly when NMASK should be saying "is not y".
pub fn is_divergent(p_pos: f64, p_neg: f64) -> bool {
    (p_pos >= 0.5 && p_neg >= 0.5) || (p_pos < 0.5 && p_neg < 0.5)
}

pub fn detect_divergent(scores: &CoPredictionScores) -> Vec<bool> {
    scores
        .p_pos
        .iter()
        .zip(&scores.p_neg)
        .map(|(&p, &n)| is_divergent(p, n))
        .collect()
}

/// Binary cross-entropy on a probability, `0 · ln 0` taken as 0.
pub fn bce(p: f64, target: f64) -> f64 {
    let a = if target > 0.0 { -target * p.ln() } else { 0.0 };
    let b = if target < 1.0 {
        -(1.0 - target) * (1.0 - p).ln()
    } else {
        0.0
    };
    a + b
}

/// `BCE(sigmoid(z), target)` and its derivative in `z`.
pub fn bce_with_logits(z: f64, target: f64) -> (f64, f64) {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    (softplus - target * z, crate::model::sigmoid(z) - target)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("{gamma} is outside (0, 1]")));
    }
    Ok(())
}

fn check_gold(gold: &LabelSet, t: usize) -> Result<()> {
    if let Some(&y) = gold.iter().find(|&&y| y >= t) {
        return Err(Error::invalid("gold", format!("label {y} outside {t} types")));
    }
    Ok(())
}

/// Divergence-weighted co-prediction loss on probabilities.
pub fn coprediction_loss(scores: &CoPredictionScores, gold: &LabelSet, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_gold(gold, scores.len())?;
    let divergent = detect_divergent(scores);
    let (mut div, mut cons) = (0.0, 0.0);
    for (y, &is_div) in divergent.iter().enumerate() {
        let target = if gold.contains(&y) { 1.0 } else { 0.0 };
        let l = bce(scores.p_pos[y], target) + bce(scores.p_neg[y], 1.0 - target);
        if is_div {
            div += l;
        } else {
            cons += l;
        }
    }
    Ok(gamma * div + cons)
}

/// Loss value, gradients with respect to the logits and the divergence
/// mask that gated them.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Option<Vec<f64>>,
    pub divergent: Vec<bool>,
}

/// Loss with explicit per-label weights; the weights are constants.
pub fn weighted_loss_from_logits(logits: &CoPredictionLogits, gold: &LabelSet, weights: &[f64]) -> LossTerms {
    let t = logits.len();
    assert_eq!(weights.len(), t);
    let mut loss = 0.0;
    let mut d_pos = vec![0.0; t];
    let mut d_neg = logits.neg.as_ref().map(|_| vec![0.0; t]);
    for y in 0..t {
        let target = if gold.contains(&y) { 1.0 } else { 0.0 };
        let (l, d) = bce_with_logits(logits.pos[y], target);
        let mut ly = l;
        d_pos[y] = weights[y] * d;
        if let (Some(neg), Some(dn)) = (&logits.neg, d_neg.as_mut()) {
            let (l, d) = bce_with_logits(neg[y], 1.0 - target);
            ly += l;
            dn[y] = weights[y] * d;
        }
        loss += weights[y] * ly;
    }
    LossTerms {
        loss,
        d_pos,
        d_neg,
        divergent: vec![false; t],
    }
}

/// Training loss from logits. Divergence is read off the current scores and
/// only scales the loss; it is not differentiated. Without an NMASK head the
/// loss is plain BCE on PMASK and nothing is flagged.
pub fn coprediction_loss_from_logits(
    logits: &CoPredictionLogits,
    gold: &LabelSet,
    gamma: f64,
) -> Result<LossTerms> {
    check_gamma(gamma)?;
    check_gold(gold, logits.len())?;
    let divergent = match logits.neg {
        Some(_) => detect_divergent(&logits.scores()),
        None => vec![false; logits.len()],
    };
    let weights: Vec<f64> = divergent.iter().map(|&d| if d { gamma } else { 1.0 }).collect();
    let mut terms = weighted_loss_from_logits(logits, gold, &weights);
    terms.divergent = divergent;
    Ok(terms)
}
