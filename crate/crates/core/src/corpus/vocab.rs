use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The fixed set of fine-grained type paths, e.g. `/organization/company`.
///
/// Ids are positions in file order and form a bijection onto `0..len()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TypeVocabulary {
    types: Vec<String>,
    index: HashMap<String, usize>,
}

impl TypeVocabulary {
    pub fn from_paths<I, S>(paths: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut types = Vec::new();
        let mut index = HashMap::new();
        for path in paths {
            let path = path.into();
            validate_path(&path).map_err(|m| Error::invalid("type path", m))?;
            if index.insert(path.clone(), types.len()).is_some() {
                return Err(Error::invalid("type path", format!("duplicate `{path}`")));
            }
            types.push(path);
        }
        if types.is_empty() {
            return Err(Error::invalid("type vocabulary", "no types"));
        }
        Ok(Self { types, index })
    }

    /// Reads one type path per line. Blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut types = Vec::new();
        let mut index = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            validate_path(line).map_err(parse_err)?;
            if let Some(first) = index.insert(line.to_string(), types.len()) {
                return Err(parse_err(format!(
                    "duplicate type `{line}` (first seen as entry {})",
                    first + 1
                )));
            }
            types.push(line.to_string());
        }
        if types.is_empty() {
            return Err(Error::invalid(
                "type vocabulary",
                format!("{} contains no types", path.display()),
            ));
        }
        Ok(Self { types, index })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.types.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn id(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn path(&self, id: usize) -> &str {
        &self.types[id]
    }

    pub fn paths(&self) -> &[String] {
        &self.types
    }

    /// Number of `/`-separated segments.
    pub fn depth(&self, id: usize) -> usize {
        segments(&self.types[id]).count()
    }

    pub fn max_depth(&self) -> usize {
        (0..self.len()).map(|id| self.depth(id)).max().unwrap_or(0)
    }

    /// Id of the immediate parent path, if that path is itself in the vocabulary.
    pub fn parent(&self, id: usize) -> Option<usize> {
        let path = &self.types[id];
        let cut = path.rfind('/')?;
        if cut == 0 {
            return None;
        }
        self.id(&path[..cut])
    }

    /// Path segments of a type, e.g. `["organization", "company"]`.
    pub fn segments(&self, id: usize) -> impl Iterator<Item = &str> {
        segments(&self.types[id])
    }
}

fn segments(path: &str) -> impl Iterator<Item = &str> {
    path.split('/').filter(|s| !s.is_empty())
}

fn validate_path(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("empty type path".into());
    }
    if !path.starts_with('/') {
        return Err(format!("type path `{path}` must begin with `/`"));
    }
    if path.len() == 1 || path.split('/').skip(1).any(str::is_empty) {
        return Err(format!("type path `{path}` has an empty segment"));
    }
    if path.chars().any(char::is_whitespace) {
        return Err(format!("type path `{path}` contains whitespace"));
    }
    Ok(())
}

impl TryFrom<Vec<String>> for TypeVocabulary {
    type Error = Error;

    fn try_from(paths: Vec<String>) -> Result<Self> {
        Self::from_paths(paths)
    }
}

impl From<TypeVocabulary> for Vec<String> {
    fn from(vocab: TypeVocabulary) -> Self {
        vocab.types
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_type() {
        let f = write_tmp("/person\n");
        let v = TypeVocabulary::load(f.path()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.depth(0), 1);
        assert_eq!(v.id("/person"), Some(0));
    }

    #[test]
    fn depth_counts_segments() {
        let v = TypeVocabulary::from_paths(["/organization", "/organization/company/news"]).unwrap();
        assert_eq!(v.depth(1), 3);
        assert_eq!(v.max_depth(), 3);
        let segs: Vec<_> = v.segments(1).collect();
        assert_eq!(segs, ["organization", "company", "news"]);
    }

    #[test]
    fn keeps_file_order() {
        let paths: Vec<String> = (0..89).map(|i| format!("/t{i}")).collect();
        let f = write_tmp(&paths.join("\n"));
        let v = TypeVocabulary::load(f.path()).unwrap();
        assert_eq!(v.len(), 89);
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(v.path(i), p);
            assert_eq!(v.id(p), Some(i));
        }
    }

    #[test]
    fn duplicate_names_the_line() {
        let f = write_tmp("/a\n/b\n/a\n");
        match TypeVocabulary::load(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("/a"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("\n\n");
        assert!(matches!(
            TypeVocabulary::load(f.path()),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn malformed_paths_are_rejected() {
        for bad in ["person", "/", "/a//b", "/a/", "/a b"] {
            assert!(TypeVocabulary::from_paths([bad]).is_err(), "{bad}");
        }
    }

    #[test]
    fn parent_lookup() {
        let v = TypeVocabulary::from_paths(["/person", "/person/artist", "/location/city"]).unwrap();
        assert_eq!(v.parent(1), Some(0));
        assert_eq!(v.parent(0), None);
        assert_eq!(v.parent(2), None);
    }

    #[test]
    fn serde_roundtrip() {
        let v = TypeVocabulary::from_paths(["/a", "/a/b"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["/a","/a/b"]"#);
        let back: TypeVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
