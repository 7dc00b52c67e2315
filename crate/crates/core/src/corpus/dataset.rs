use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::TypeVocabulary;
use crate::error::{Error, Result};

/// Label ids of one example, ordered by id.
pub type LabelSet = BTreeSet<usize>;

/// One mention in context with its (possibly noisy) gold labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MentionExample {
    pub id: String,
    pub left: Vec<String>,
    pub mention: Vec<String>,
    pub right: Vec<String>,
    pub labels: LabelSet,
}

impl MentionExample {
    /// Whitespace-tokenizes the three text fields.
    pub fn from_text(
        id: impl Into<String>,
        left: &str,
        mention: &str,
        right: &str,
        labels: LabelSet,
    ) -> Self {
        Self {
            id: id.into(),
            left: tokens(left),
            mention: tokens(mention),
            right: tokens(right),
            labels,
        }
    }

    /// Left context, mention and right context as one token sequence.
    pub fn context(&self) -> impl Iterator<Item = &str> {
        self.left
            .iter()
            .chain(&self.mention)
            .chain(&self.right)
            .map(String::as_str)
    }

    pub fn mention_text(&self) -> String {
        self.mention.join(" ")
    }

    pub fn sentence(&self) -> String {
        self.context().collect::<Vec<_>>().join(" ")
    }

    pub fn with_labels(&self, labels: LabelSet) -> Self {
        Self {
            labels,
            ..self.clone()
        }
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Whether examples may carry an empty label set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Training data: every example has at least one label.
    RequireLabels,
    /// Prediction input: label sets may be empty.
    AllowEmpty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<MentionExample>,
    pub vocabulary: Arc<TypeVocabulary>,
    pub split_name: String,
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    mention: String,
    left_context: String,
    right_context: String,
    labels: Vec<String>,
}

impl Dataset {
    pub fn new(
        examples: Vec<MentionExample>,
        vocabulary: Arc<TypeVocabulary>,
        split_name: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            examples,
            vocabulary,
            split_name: split_name.into(),
        };
        ds.validate(LabelPolicy::AllowEmpty)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self, policy: LabelPolicy) -> Result<()> {
        let t = self.vocabulary.len();
        for ex in &self.examples {
            if ex.mention.is_empty() {
                return Err(Error::invalid(
                    "mention",
                    format!("example `{}` has an empty mention", ex.id),
                ));
            }
            if let Some(&bad) = ex.labels.iter().find(|&&l| l >= t) {
                return Err(Error::invalid(
                    "labels",
                    format!("example `{}` has label id {bad} outside 0..{t}", ex.id),
                ));
            }
            if policy == LabelPolicy::RequireLabels && ex.labels.is_empty() {
                return Err(Error::invalid(
                    "labels",
                    format!("example `{}` has no labels", ex.id),
                ));
            }
        }
        Ok(())
    }

    /// Label sets in example order.
    pub fn label_sets(&self) -> Vec<LabelSet> {
        self.examples.iter().map(|e| e.labels.clone()).collect()
    }

    /// Same examples and vocabulary with replaced label sets.
    pub fn relabeled(&self, labels: Vec<LabelSet>, split_name: impl Into<String>) -> Self {
        assert_eq!(labels.len(), self.examples.len());
        let examples = self
            .examples
            .iter()
            .zip(labels)
            .map(|(ex, l)| ex.with_labels(l))
            .collect();
        Self {
            examples,
            vocabulary: Arc::clone(&self.vocabulary),
            split_name: split_name.into(),
        }
    }

    /// Loads a training split: every record must carry at least one label.
    pub fn load(path: impl AsRef<Path>, vocab: Arc<TypeVocabulary>) -> Result<Self> {
        Self::load_with(path, vocab, LabelPolicy::RequireLabels)
    }

    pub fn load_with(
        path: impl AsRef<Path>,
        vocab: Arc<TypeVocabulary>,
        policy: LabelPolicy,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let split_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_reader(file, path, vocab, policy, split_name)
    }

    /// Parses line-delimited JSON records. `origin` is only used in error messages.
    pub fn from_reader(
        reader: impl Read,
        origin: &Path,
        vocab: Arc<TypeVocabulary>,
        policy: LabelPolicy,
        split_name: impl Into<String>,
    ) -> Result<Self> {
        let mut examples = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                message,
            };
            let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let mut labels = LabelSet::new();
            for label in &record.labels {
                let id = vocab
                    .id(label)
                    .ok_or_else(|| Error::UnknownLabel(label.clone()))?;
                labels.insert(id);
            }
            let ex = MentionExample::from_text(
                record.id.unwrap_or_else(|| format!("line-{lineno}")),
                &record.left_context,
                &record.mention,
                &record.right_context,
                labels,
            );
            if ex.mention.is_empty() {
                return Err(parse_err("empty mention".into()));
            }
            if policy == LabelPolicy::RequireLabels && ex.labels.is_empty() {
                return Err(parse_err("record has no labels".into()));
            }
            examples.push(ex);
        }
        Ok(Self {
            examples,
            vocabulary: vocab,
            split_name: split_name.into(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.to_writer(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        for ex in &self.examples {
            let record = Record {
                id: Some(ex.id.clone()),
                mention: ex.mention.join(" "),
                left_context: ex.left.join(" "),
                right_context: ex.right.join(" "),
                labels: ex
                    .labels
                    .iter()
                    .map(|&l| self.vocabulary.path(l).to_string())
                    .collect(),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Arc<TypeVocabulary> {
        Arc::new(TypeVocabulary::from_paths(["/person", "/person/politician", "/organization"]).unwrap())
    }

    fn parse(text: &str, policy: LabelPolicy) -> Result<Dataset> {
        Dataset::from_reader(text.as_bytes(), Path::new("mem"), vocab(), policy, "test")
    }

    const THREE: &str = r#"{"id":"a","mention":"Wilson","left_context":"","right_context":"was appointed minister","labels":["/person","/person/politician"]}
{"mention":"Acme Corp","left_context":"shares of","right_context":"fell","labels":["/organization"]}
{"id":"c","mention":"she","left_context":"","right_context":"said","labels":["/person"]}
"#;

    #[test]
    fn loads_three_records() {
        let ds = parse(THREE, LabelPolicy::RequireLabels).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.examples[0].mention, ["Wilson"]);
        assert_eq!(ds.examples[0].labels, LabelSet::from([0, 1]));
        assert_eq!(ds.examples[1].id, "line-2");
        assert_eq!(ds.examples[1].left, ["shares", "of"]);
    }

    #[test]
    fn unknown_label_is_named() {
        let text = r#"{"mention":"x","left_context":"","right_context":"","labels":["/nonexistent"]}"#;
        match parse(text, LabelPolicy::RequireLabels) {
            Err(Error::UnknownLabel(l)) => assert_eq!(l, "/nonexistent"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = format!("{}\n{{\"mention\": 3}}\n", THREE.lines().next().unwrap());
        match parse(&text, LabelPolicy::RequireLabels) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_labels_depend_on_policy() {
        let text = r#"{"mention":"x","left_context":"","right_context":"","labels":[]}"#;
        assert!(parse(text, LabelPolicy::RequireLabels).is_err());
        assert_eq!(parse(text, LabelPolicy::AllowEmpty).unwrap().len(), 1);
    }

    #[test]
    fn empty_mention_rejected() {
        let text = r#"{"mention":"  ","left_context":"a","right_context":"","labels":["/person"]}"#;
        assert!(matches!(
            parse(text, LabelPolicy::AllowEmpty),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn write_then_read_is_identity() {
        let ds = parse(THREE, LabelPolicy::RequireLabels).unwrap();
        let mut buf = Vec::new();
        ds.to_writer(&mut buf).unwrap();
        let back = Dataset::from_reader(
            buf.as_slice(),
            Path::new("mem"),
            vocab(),
            LabelPolicy::RequireLabels,
            "test",
        )
        .unwrap();
        assert_eq!(back.examples, ds.examples);
    }
}
