use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelSet};
use crate::error::{Error, Result};

/// Synthetic corruption of clean label sets.
///
/// Each clean label is independently dropped with `drop_rate`; a label that
/// survives is replaced by a random wrong label with `inaccurate_rate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub inaccurate_rate: f64,
    pub drop_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(inaccurate_rate: f64, drop_rate: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            inaccurate_rate,
            drop_rate,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("inaccurate_rate", self.inaccurate_rate),
            ("drop_rate", self.drop_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(field, format!("{v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Returns `(noisy, ground_truth)`. The ground truth is an untouched copy of `clean`.
///
/// Every noisy example keeps at least one label: if corruption empties a set,
/// one of the clean labels is reinstated at random.
pub fn inject_noise(clean: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let t = clean.vocabulary.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = Vec::with_capacity(clean.len());
    for ex in &clean.examples {
        if ex.labels.is_empty() {
            return Err(Error::invalid(
                "labels",
                format!("example `{}` has no clean labels to corrupt", ex.id),
            ));
        }
        let mut out = LabelSet::new();
        for &label in &ex.labels {
            // Both draws happen for every label so the stream does not depend on outcomes.
            let u_drop: f64 = rng.random();
            let u_swap: f64 = rng.random();
            if u_drop < spec.drop_rate {
                continue;
            }
            if u_swap < spec.inaccurate_rate {
                let wrong: Vec<usize> = (0..t)
                    .filter(|y| !ex.labels.contains(y) && !out.contains(y))
                    .collect();
                match wrong.choose(&mut rng) {
                    Some(&w) => {
                        out.insert(w);
                    }
                    None => {
                        out.insert(label);
                    }
                }
            } else {
                out.insert(label);
            }
        }
        if out.is_empty() {
            let labels: Vec<usize> = ex.labels.iter().copied().collect();
            out.insert(*labels.choose(&mut rng).expect("non-empty"));
        }
        noisy.push(out);
    }
    let noisy = clean.relabeled(noisy, format!("{}-noisy", clean.split_name));
    Ok((noisy, clean.clone()))
}
