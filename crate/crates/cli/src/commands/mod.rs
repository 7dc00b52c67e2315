pub mod annotate;
pub mod correct;
pub mod evaluate;
pub mod plot;
pub mod rerun;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use coprompt::corpus::{Dataset, LabelPolicy, TypeVocabulary};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

/// Library errors raised while checking settings are usage errors.
pub fn usage_on_invalid(e: coprompt::Error) -> CliError {
    match e {
        coprompt::Error::Invalid { .. } => CliError::usage(e),
        other => CliError::runtime(other),
    }
}

/// Shallow union of serialized maps; later keys win.
pub fn merge_maps(parts: impl IntoIterator<Item = Value>) -> Value {
    let mut out = Map::new();
    for part in parts {
        if let Value::Object(m) = part {
            out.extend(m);
        }
    }
    Value::Object(out)
}

/// A map from literal key/value pairs.
pub fn map<const N: usize>(pairs: [(&str, Value); N]) -> Value {
    Value::Object(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

pub fn json<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("settings serialize")
}

pub fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

pub fn default_out_dir(command: &str) -> Value {
    json(PathBuf::from("runs").join(command))
}

pub fn load_vocab(path: &Path) -> CliResult<Arc<TypeVocabulary>> {
    TypeVocabulary::load(path)
        .map(Arc::new)
        .map_err(CliError::runtime)
}

pub fn load_dataset(path: &Path, vocab: &Arc<TypeVocabulary>, policy: LabelPolicy) -> CliResult<Dataset> {
    Dataset::load_with(path, Arc::clone(vocab), policy).map_err(CliError::runtime)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> CliResult<()> {
    dataset.save(path).map_err(CliError::runtime)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
