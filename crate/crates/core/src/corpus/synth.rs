//! Seeded synthetic typing corpora with known clean labels.
//!
//! Every example has one target type; its gold set is the target plus its
//! ancestors. Contexts mix filler words with cue words drawn from the target
//! type's (and its parent's) lexicon, so the labels are recoverable from text.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelSet, MentionExample, TypeVocabulary};
use crate::error::{Error, Result};

const COARSE: &[&str] = &[
    "person",
    "organization",
    "location",
    "event",
    "product",
    "art",
    "animal",
    "food",
    "disease",
    "language",
];

const FINE: &[&[&str]] = &[
    &["artist", "athlete", "politician", "doctor", "lawyer", "soldier"],
    &["company", "government", "team", "school", "party", "hospital"],
    &["city", "country", "river", "mountain", "island", "park"],
    &["war", "election", "festival", "disaster", "attack", "trial"],
    &["car", "phone", "software", "weapon", "ship", "aircraft"],
    &["film", "book", "song", "painting", "play", "broadcast"],
    &["bird", "fish", "insect", "mammal", "reptile", "dog"],
    &["dish", "drink", "fruit", "cheese", "bread", "spice"],
    &["virus", "cancer", "infection", "disorder", "syndrome", "injury"],
    &["dialect", "script", "creole", "pidgin", "sign", "code"],
];

const FILLER: &[&str] = &[
    "the",
    "a",
    "of",
    "in",
    "on",
    "said",
    "was",
    "has",
    "and",
    "to",
    "for",
    "with",
    "at",
    "by",
    "from",
    "after",
    "before",
    "during",
    "when",
    "new",
    "last",
    "year",
    "week",
    "report",
    "according",
    "officials",
    "also",
    "that",
    "which",
    "while",
    "its",
    "their",
    "about",
    "over",
    "under",
    "into",
    "between",
    "recently",
    "however",
    "since",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "tr", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ea"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_types: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub seed: u64,
    pub cues_per_type: usize,
    pub names_per_type: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_types: 8,
            n_train: 200,
            n_dev: 100,
            seed: 7,
            cues_per_type: 6,
            names_per_type: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub vocabulary: Arc<TypeVocabulary>,
    /// Clean training split; corrupt it with [`super::inject_noise`].
    pub train: Dataset,
    /// Clean held-out split for model selection.
    pub dev: Dataset,
}

/// Type paths for `n` types: roughly a third coarse, the rest fine children
/// assigned round-robin to the coarse types.
pub fn synthetic_type_paths(n: usize) -> Vec<String> {
    let n_coarse = n.div_ceil(3).max(1).min(n);
    let coarse: Vec<String> = (0..n_coarse)
        .map(|i| match COARSE.get(i) {
            Some(name) => format!("/{name}"),
            None => format!("/class{i}"),
        })
        .collect();
    let mut paths = coarse.clone();
    let mut per_parent = vec![0usize; n_coarse];
    for k in 0..n - n_coarse {
        let parent = k % n_coarse;
        let j = per_parent[parent];
        per_parent[parent] += 1;
        let name = FINE
            .get(parent)
            .and_then(|names| names.get(j))
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("sub{j}"));
        paths.push(format!("{}/{name}", coarse[parent]));
    }
    paths
}

struct Lexicon {
    cues: Vec<Vec<String>>,
    names: Vec<Vec<String>>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize, used: &mut HashSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if rng.random_bool(0.5) {
            w.push_str(["n", "r", "s", "l", "m"].choose(rng).unwrap());
        }
        if !FILLER.contains(&w.as_str()) && used.insert(w.clone()) {
            return w;
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    if config.n_types == 0 {
        return Err(Error::invalid("n_types", "must be at least 1"));
    }
    if config.n_train == 0 {
        return Err(Error::invalid("n_train", "must be at least 1"));
    }
    if config.cues_per_type == 0 || config.names_per_type == 0 {
        return Err(Error::invalid("lexicon", "cue and name pools must be non-empty"));
    }
    let vocab = Arc::new(TypeVocabulary::from_paths(synthetic_type_paths(config.n_types))?);
    let t = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut used = HashSet::new();
    let lex = Lexicon {
        cues: (0..t)
            .map(|_| {
                (0..config.cues_per_type)
                    .map(|_| pseudo_word(&mut rng, 2, &mut used))
                    .collect()
            })
            .collect(),
        names: (0..t)
            .map(|_| {
                (0..config.names_per_type)
                    .map(|_| capitalize(&pseudo_word(&mut rng, 2, &mut used)))
                    .collect()
            })
            .collect(),
    };

    // Targets are the leaves of the hierarchy.
    let has_child: Vec<bool> = (0..t)
        .map(|y| (0..t).any(|c| vocab.parent(c) == Some(y)))
        .collect();
    let targets: Vec<usize> = (0..t).filter(|&y| !has_child[y]).collect();

    let mut make_split = |n: usize, prefix: &str| -> Vec<MentionExample> {
        (0..n)
            .map(|i| {
                let target = *targets.choose(&mut rng).unwrap();
                let mut labels = LabelSet::from([target]);
                let mut up = vocab.parent(target);
                while let Some(p) = up {
                    labels.insert(p);
                    up = vocab.parent(p);
                }
                sample_example(&mut rng, &lex, &vocab, target, format!("{prefix}-{i}"), labels)
            })
            .collect()
    };
    let train = make_split(config.n_train, "train");
    let dev = make_split(config.n_dev, "dev");

    Ok(SyntheticCorpus {
        train: Dataset::new(train, Arc::clone(&vocab), "train")?,
        dev: Dataset::new(dev, Arc::clone(&vocab), "dev")?,
        vocabulary: vocab,
    })
}

fn sample_example(
    rng: &mut ChaCha8Rng,
    lex: &Lexicon,
    vocab: &TypeVocabulary,
    target: usize,
    id: String,
    labels: LabelSet,
) -> MentionExample {
    let parent = vocab.parent(target);
    let word = |rng: &mut ChaCha8Rng| -> String {
        let r: f64 = rng.random();
        if r < 0.3 {
            lex.cues[target].choose(rng).unwrap().clone()
        } else if r < 0.45 {
            lex.cues[parent.unwrap_or(target)].choose(rng).unwrap().clone()
        } else {
            FILLER.choose(rng).unwrap().to_string()
        }
    };
    let left_len = rng.random_range(3..=7);
    let right_len = rng.random_range(3..=7);
    let mut left: Vec<String> = (0..left_len).map(|_| word(rng)).collect();
    let mut right: Vec<String> = (0..right_len).map(|_| word(rng)).collect();

    let has_cue = left.iter().chain(&right).any(|w| lex.cues[target].contains(w));
    if !has_cue {
        let pos = rng.random_range(0..left_len + right_len);
        let cue = lex.cues[target].choose(rng).unwrap().clone();
        if pos < left_len {
            left[pos] = cue;
        } else {
            right[pos - left_len] = cue;
        }
    }

    let mut mention = vec![lex.names[target].choose(rng).unwrap().clone()];
    if rng.random_bool(0.3) {
        mention.push(lex.names[target].choose(rng).unwrap().clone());
    }
    MentionExample {
        id,
        left,
        mention,
        right,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_type_hierarchy() {
        let paths = synthetic_type_paths(8);
        assert_eq!(
            paths,
            [
                "/person",
                "/organization",
                "/location",
                "/person/artist",
                "/organization/company",
                "/location/city",
                "/person/athlete",
                "/organization/government",
            ]
        );
    }

    #[test]
    fn large_type_counts_are_unique() {
        for n in [1, 2, 3, 40, 120] {
            let v = TypeVocabulary::from_paths(synthetic_type_paths(n)).unwrap();
            assert_eq!(v.len(), n);
        }
    }

    #[test]
    fn examples_carry_target_and_ancestors() {
        let corpus = generate(&SynthConfig::default()).unwrap();
        assert_eq!(corpus.train.len(), 200);
        assert_eq!(corpus.dev.len(), 100);
        let v = &corpus.vocabulary;
        for ex in corpus.train.examples.iter().chain(&corpus.dev.examples) {
            assert_eq!(ex.labels.len(), 2);
            let deepest = *ex.labels.iter().max_by_key(|&&l| v.depth(l)).unwrap();
            assert_eq!(ex.labels, LabelSet::from([deepest, v.parent(deepest).unwrap()]));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        let c = generate(&SynthConfig {
            seed: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(a.train.examples, c.train.examples);
    }
}
