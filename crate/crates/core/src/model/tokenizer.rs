use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// Lower-cased whole-word tokenizer with BERT-style special tokens at ids 0..5.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct WordTokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordTokenizer {
    /// Builds a vocabulary from words in first-seen order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tok = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            tok.insert(s.to_string());
        }
        for w in words {
            tok.insert(w.to_lowercase());
        }
        tok
    }

    fn insert(&mut self, w: String) {
        if !self.index.contains_key(&w) {
            self.index.insert(w.clone(), self.words.len());
            self.words.push(w);
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of a known word, `None` for out-of-vocabulary words.
    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(&word.to_lowercase()).copied()
    }

    /// Id of a word with `[UNK]` fallback.
    pub fn id(&self, word: &str) -> usize {
        self.lookup(word).unwrap_or(self.unk_id())
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn cls_id(&self) -> usize {
        2
    }

    pub fn sep_id(&self) -> usize {
        3
    }

    pub fn mask_id(&self) -> usize {
        4
    }
}

impl TryFrom<Vec<String>> for WordTokenizer {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Checkpoint(
                "tokenizer vocabulary does not start with the special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tokenizer word `{w}`")));
            }
        }
        Ok(Self { words, index })
    }
}

impl From<WordTokenizer> for Vec<String> {
    fn from(t: WordTokenizer) -> Self {
        t.words
    }
}

/// Words of a type path: segments split on `/`, `_`, `-` and camelCase
/// boundaries, lower-cased. `/organization/sportsTeam` gives
/// `["organization", "sports", "team"]`.
pub fn type_words(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in path.split(['/', '_', '-']).filter(|s| !s.is_empty()) {
        let mut cur = String::new();
        let mut prev_lower = false;
        for ch in piece.chars() {
            if ch.is_uppercase() && prev_lower && !cur.is_empty() {
                out.push(std::mem::take(&mut cur).to_lowercase());
            }
            prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
            cur.push(ch);
        }
        if !cur.is_empty() {
            out.push(cur.to_lowercase());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let t = WordTokenizer::build(["Hello", "world", "hello"]);
        assert_eq!(t.len(), 7);
        assert_eq!(t.word(t.mask_id()), MASK);
        assert_eq!(t.lookup("HELLO"), Some(5));
        assert_eq!(t.id("missing"), t.unk_id());
    }

    #[test]
    fn type_word_splitting() {
        assert_eq!(
            type_words("/organization/company/news"),
            ["organization", "company", "news"]
        );
        assert_eq!(
            type_words("/organization/sportsTeam"),
            ["organization", "sports", "team"]
        );
        assert_eq!(
            type_words("/location/body_of_water"),
            ["location", "body", "of", "water"]
        );
        assert_eq!(type_words("/person"), ["person"]);
        assert_eq!(type_words("/NBA"), ["nba"]);
    }

    #[test]
    fn serde_roundtrip() {
        let t = WordTokenizer::build(["a", "b"]);
        let json = serde_json::to_string(&t).unwrap();
        let back: WordTokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<WordTokenizer>(r#"["a","b"]"#).is_err());
    }
}
