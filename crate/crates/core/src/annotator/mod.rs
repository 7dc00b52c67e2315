//! Weak relabeling through a text completion service.
//!
//! [`filter_candidates`] keeps examples with frequent mentions and draws a
//! seeded sample; [`annotate`] sends each one to a [`CompletionClient`],
//! parses the reply into type paths and logs every attempt.

mod client;

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSet, MentionExample, TypeVocabulary};
use crate::error::{Error, Result};

pub use client::{
    extract_completion, CompletionClient, CompletionRequest, HttpClient, MockClient, RateLimiter,
    DEFAULT_API_KEY_ENV,
};

pub const DEFAULT_TEMPLATE: &str = "Sentence: {sentence}\n\
Entity mention: {mention}\n\
Candidate types: {types}\n\
Which of the candidate types describe the entity mention in this sentence? \
Answer with the matching types only, separated by commas.";

pub const PLACEHOLDERS: [&str; 3] = ["{sentence}", "{mention}", "{types}"];

pub fn default_stop_mentions() -> Vec<String> {
    vec!["yes".into(), "please".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub min_frequency: usize,
    /// Examples to draw after filtering; `None` keeps the whole pool.
    pub sample_size: Option<usize>,
    pub temperature: f64,
    pub top_p: f64,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub prompt_template: String,
    /// Requests per second; infinite disables limiting.
    pub rate_limit: f64,
    pub max_retries: u32,
    /// Backoff before retry `k` is `retry_backoff_ms * 2^k`.
    pub retry_backoff_ms: u64,
    pub stop_mentions: Vec<String>,
    pub seed: u64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            min_frequency: 10,
            sample_size: Some(3000),
            temperature: 0.7,
            top_p: 1.0,
            endpoint: "https://api.openai.com/v1/completions".into(),
            model: "text-davinci-003".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            prompt_template: DEFAULT_TEMPLATE.into(),
            rate_limit: 1.0,
            max_retries: 3,
            retry_backoff_ms: 500,
            stop_mentions: default_stop_mentions(),
            seed: 0,
        }
    }
}

impl AnnotatorConfig {
    pub fn ontonotes() -> Self {
        Self::default()
    }

    pub fn wiki() -> Self {
        Self {
            min_frequency: 20,
            sample_size: Some(9000),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(
                "temperature",
                format!("{} must be >= 0", self.temperature),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid("top_p", format!("{} not in (0, 1]", self.top_p)));
        }
        if self.rate_limit.is_nan() || self.rate_limit <= 0.0 {
            return Err(Error::invalid("rate_limit", "must be positive"));
        }
        if let Some(p) = PLACEHOLDERS.iter().find(|p| !self.prompt_template.contains(*p)) {
            return Err(Error::invalid(
                "prompt_template",
                format!("missing placeholder {p}"),
            ));
        }
        Ok(())
    }
}

fn mention_key(ex: &MentionExample) -> String {
    ex.mention_text().to_lowercase()
}

/// Mention surface frequencies (case-insensitive).
pub fn mention_frequencies(dataset: &Dataset) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for ex in &dataset.examples {
        *counts.entry(mention_key(ex)).or_insert(0) += 1;
    }
    counts
}

/// Keeps examples whose mention occurs at least `min_frequency` times and is
/// not a stop mention, then draws `sample_size` of them (in corpus order).
pub fn filter_candidates(dataset: &Dataset, config: &AnnotatorConfig) -> Result<Dataset> {
    let counts = mention_frequencies(dataset);
    let stop: BTreeSet<String> = config.stop_mentions.iter().map(|s| s.to_lowercase()).collect();
    let pool: Vec<&MentionExample> = dataset
        .examples
        .iter()
        .filter(|ex| {
            let key = mention_key(ex);
            counts[&key] >= config.min_frequency && !stop.contains(&key)
        })
        .collect();
    let chosen: Vec<MentionExample> = match config.sample_size {
        None => pool.into_iter().cloned().collect(),
        Some(k) if k > pool.len() => {
            return Err(Error::SampleTooLarge {
                requested: k,
                pool: pool.len(),
            })
        }
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut idx = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pool[i].clone()).collect()
        }
    };
    Ok(Dataset {
        examples: chosen,
        vocabulary: dataset.vocabulary.clone(),
        split_name: format!("{}-sample", dataset.split_name),
    })
}

pub fn build_prompt(example: &MentionExample, vocab: &TypeVocabulary, template: &str) -> String {
    template
        .replace("{sentence}", &example.sentence())
        .replace("{mention}", &example.mention_text())
        .replace("{types}", &vocab.paths().join(", "))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub labels: LabelSet,
    pub unmatched: Vec<String>,
}

/// Splits on commas and newlines and matches each piece case-insensitively
/// against the vocabulary, adding a leading `/` when missing.
pub fn parse_response(text: &str, vocab: &TypeVocabulary) -> ParsedResponse {
    let lookup: HashMap<String, usize> = vocab
        .paths()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.to_lowercase(), i))
        .collect();
    let mut out = ParsedResponse::default();
    for piece in text.split([',', '\n']) {
        let item = piece
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim()
            .trim_matches(['"', '\'', '`', '.'])
            .trim();
        if item.is_empty() {
            continue;
        }
        let mut key = item.to_lowercase();
        if !key.starts_with('/') {
            key.insert(0, '/');
        }
        match lookup.get(&key) {
            Some(&y) => {
                out.labels.insert(y);
            }
            None => out.unmatched.push(item.to_string()),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStatus {
    Ok,
    Failed,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub index: usize,
    pub example_id: String,
    pub prompt: String,
    pub response: Option<String>,
    pub attempts: u32,
    pub labels: Vec<String>,
    pub unmatched: Vec<String>,
    pub status: AnnotationStatus,
    pub error: Option<String>,
}

pub struct Annotation {
    /// Successfully labeled examples with their new labels.
    pub dataset: Dataset,
    /// One record per input example, in input order.
    pub log: Vec<AnnotationRecord>,
}

impl Annotation {
    pub fn count(&self, status: AnnotationStatus) -> usize {
        self.log.iter().filter(|r| r.status == status).count()
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.log {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
        }
        Ok(())
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_log(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn annotate_one(
    index: usize,
    example: &MentionExample,
    vocab: &TypeVocabulary,
    config: &AnnotatorConfig,
    client: &dyn CompletionClient,
    limiter: &RateLimiter,
) -> AnnotationRecord {
    let prompt = build_prompt(example, vocab, &config.prompt_template);
    let mut record = AnnotationRecord {
        index,
        example_id: example.id.clone(),
        prompt,
        response: None,
        attempts: 0,
        labels: Vec::new(),
        unmatched: Vec::new(),
        status: AnnotationStatus::Failed,
        error: None,
    };
    for attempt in 0..=config.max_retries {
        if attempt > 0 && config.retry_backoff_ms > 0 {
            std::thread::sleep(Duration::from_millis(
                config.retry_backoff_ms << (attempt - 1).min(16),
            ));
        }
        limiter.acquire();
        record.attempts = attempt + 1;
        let request = CompletionRequest {
            prompt: record.prompt.clone(),
            temperature: config.temperature,
            top_p: config.top_p,
            attempt,
        };
        match client.complete(&request) {
            Ok(text) => {
                let parsed = parse_response(&text, vocab);
                record.labels = parsed.labels.iter().map(|&y| vocab.path(y).to_string()).collect();
                record.unmatched = parsed.unmatched;
                record.status = if parsed.labels.is_empty() {
                    AnnotationStatus::Empty
                } else {
                    AnnotationStatus::Ok
                };
                record.response = Some(text);
                record.error = None;
                return record;
            }
            Err(e) => record.error = Some(e),
        }
    }
    record
}

/// Relabels every example. Requests run concurrently under the rate limit;
/// the log is in input order.
pub fn annotate(
    examples: &Dataset,
    config: &AnnotatorConfig,
    client: &dyn CompletionClient,
) -> Result<Annotation> {
    config.validate()?;
    let limiter = RateLimiter::new(config.rate_limit);
    let vocab = examples.vocabulary.as_ref();
    let log: Vec<AnnotationRecord> = examples
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| annotate_one(i, ex, vocab, config, client, &limiter))
        .collect();
    let labeled = log
        .iter()
        .filter(|r| r.status == AnnotationStatus::Ok)
        .map(|r| {
            let labels = r.labels.iter().filter_map(|p| vocab.id(p)).collect();
            examples.examples[r.index].with_labels(labels)
        })
        .collect();
    Ok(Annotation {
        dataset: Dataset {
            examples: labeled,
            vocabulary: examples.vocabulary.clone(),
            split_name: format!("{}-annotated", examples.split_name),
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn vocab() -> Arc<TypeVocabulary> {
        Arc::new(TypeVocabulary::from_paths(["/person", "/person/politician", "/location"]).unwrap())
    }

    fn ds(mentions: &[&str]) -> Dataset {
        let examples = mentions
            .iter()
            .enumerate()
            .map(|(i, m)| MentionExample::from_text(format!("e{i}"), "he met", m, "today", [0].into()))
            .collect();
        Dataset::new(examples, vocab(), "train").unwrap()
    }

    fn quick() -> AnnotatorConfig {
        AnnotatorConfig {
            rate_limit: f64::INFINITY,
            retry_backoff_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn parse_rule() {
        let v = vocab();
        let p = parse_response("/person/politician, /person", &v);
        assert_eq!(p.labels, [1, 0].into());
        let p = parse_response("- Person\n* location.\nbanana", &v);
        assert_eq!(p.labels, [0, 2].into());
        assert_eq!(p.unmatched, ["banana"]);
    }

    #[test]
    fn filter_identity_and_frequency() {
        let d = ds(&["Obama", "obama", "Paris", "yes", "yes", "yes"]);
        let all = AnnotatorConfig {
            min_frequency: 0,
            sample_size: None,
            stop_mentions: vec![],
            ..quick()
        };
        assert_eq!(filter_candidates(&d, &all).unwrap().examples, d.examples);
        let two = AnnotatorConfig {
            min_frequency: 2,
            sample_size: None,
            ..quick()
        };
        let kept = filter_candidates(&d, &two).unwrap();
        assert_eq!(
            kept.examples.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
            ["e0", "e1"]
        );
        let big = AnnotatorConfig {
            sample_size: Some(5),
            ..two
        };
        assert!(matches!(
            filter_candidates(&d, &big),
            Err(Error::SampleTooLarge {
                requested: 5,
                pool: 2
            })
        ));
    }

    #[test]
    fn mock_annotation_intersects_vocabulary() {
        let d = ds(&["Obama", "Paris"]);
        let mock = MockClient::fixed(&["/Person", "/animal"]);
        let out = annotate(&d, &quick(), &mock).unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.dataset.examples.iter().all(|e| e.labels == [0].into()));
        assert_eq!(out.log[0].unmatched, ["/animal"]);
    }

    #[test]
    fn retries_then_failure() {
        let d = ds(&["Obama", "Paris"]);
        let mock = MockClient::new(|r| {
            if r.prompt.contains("Paris") {
                Err("down".into())
            } else if r.attempt < 2 {
                Err("flaky".into())
            } else {
                Ok("nothing useful".into())
            }
        });
        let out = annotate(&d, &quick(), &mock).unwrap();
        assert_eq!(out.log[0].status, AnnotationStatus::Empty);
        assert_eq!(out.log[0].attempts, 3);
        assert_eq!(out.log[1].status, AnnotationStatus::Failed);
        assert_eq!(out.log[1].attempts, 4);
        assert_eq!(mock.calls(), 7);
        assert!(out.dataset.is_empty());
    }

    #[test]
    fn template_placeholders_required() {
        let c = AnnotatorConfig {
            prompt_template: "{sentence} {mention}".into(),
            ..quick()
        };
        assert!(c.validate().is_err());
        assert!(AnnotatorConfig {
            top_p: 0.0,
            ..quick()
        }
        .validate()
        .is_err());
    }
}
