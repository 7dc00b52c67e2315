//! Layered settings: defaults, then the config file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

/// Settings for one command read from a TOML file: top-level keys are
/// shared by all commands, keys in the `[command]` table are specific.
#[derive(Debug, Default)]
pub struct FileSettings {
    shared: Map<String, Value>,
    section: Map<String, Value>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>, command: &str) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, command).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, command: &str) -> Result<Self, String> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut out = Self::default();
        for (k, v) in table {
            match v {
                toml::Value::Table(t) if k == command => {
                    for (k, v) in t {
                        out.section.insert(k, toml_to_json(v)?);
                    }
                }
                toml::Value::Table(_) => {}
                other => {
                    out.shared.insert(k, toml_to_json(other)?);
                }
            }
        }
        Ok(out)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.section.get(key).or_else(|| self.shared.get(key))
    }
}

fn toml_to_json(v: toml::Value) -> Result<Value, String> {
    if let toml::Value::Datetime(d) = v {
        return Ok(Value::String(d.to_string()));
    }
    serde_json::to_value(v).map_err(|e| e.to_string())
}

/// Flag values that were actually given on the command line.
#[derive(Debug, Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.insert(
                key.to_string(),
                serde_json::to_value(v).expect("flag value serializes"),
            );
        }
    }

    pub fn set_if(&mut self, key: &str, on: bool, value: impl Serialize) {
        if on {
            self.set(key, Some(value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }
}

/// Looks a key up in flags first, then the file.
pub fn lookup<'a>(flags: &'a Flags, file: &'a FileSettings, key: &str) -> Option<&'a Value> {
    flags.get(key).or_else(|| file.get(key))
}

pub fn lookup_as<T: DeserializeOwned>(flags: &Flags, file: &FileSettings, key: &str) -> CliResult<Option<T>> {
    lookup(flags, file, key)
        .map(|v| {
            serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("invalid {key}: {e}")))
        })
        .transpose()
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_f64() => "number",
        Value::Number(_) => "integer",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "table",
    }
}

fn compatible(expected: &Value, given: &Value) -> bool {
    match (kind(expected), kind(given)) {
        ("null", _) | (_, "null") => true,
        ("number", "integer") => true,
        (a, b) => a == b,
    }
}

/// Overlays file settings and flags onto `defaults`, whose keys define the
/// accepted vocabulary. Unknown shared keys are skipped; unknown keys in the
/// command's table or from flags are errors. Keys in `required` must end up
/// non-null.
pub fn resolve<T: DeserializeOwned>(
    command: &str,
    defaults: Value,
    required: &[&str],
    file: &FileSettings,
    flags: &Flags,
) -> CliResult<T> {
    let Value::Object(mut merged) = defaults else {
        unreachable!("defaults serialize to a map");
    };
    let shared: Vec<_> = file
        .shared
        .iter()
        .filter(|(k, _)| merged.contains_key(*k))
        .collect();
    for (k, v) in shared.into_iter().chain(&file.section).chain(&flags.0) {
        let Some(current) = merged.get(k) else {
            return Err(CliError::usage(format!("unknown setting `{k}` for {command}")));
        };
        if !compatible(current, v) {
            return Err(CliError::usage(format!(
                "invalid {k}: expected {}, found {}",
                kind(current),
                kind(v)
            )));
        }
        merged.insert(k.clone(), v.clone());
    }
    for key in required {
        if merged.get(*key).is_none_or(Value::is_null) {
            return Err(CliError::usage(format!(
                "missing required setting `{key}` (flag --{})",
                key.replace('_', "-")
            )));
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::usage(format!("invalid {command} settings: {e}")))
}
