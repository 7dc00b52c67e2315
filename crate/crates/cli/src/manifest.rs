use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha1::{Digest, Sha1};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Object id `git hash-object` would assign to a blob with these bytes.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(git_blob_hash(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Fully resolved settings; `rerun` needs nothing else.
    pub config: Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub started_at: String,
    pub finished_at: String,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects the pieces of a manifest while a command runs.
pub struct Recorder {
    command: String,
    argv: Vec<String>,
    seed: Option<u64>,
    config: Value,
    started: DateTime<Utc>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

impl Recorder {
    pub fn start(command: &str, argv: &[String], seed: Option<u64>, config: &impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            seed,
            config: serde_json::to_value(config).expect("resolved settings serialize"),
            started: Utc::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let hash = hash_file(path)?;
        self.inputs.push(FileRecord {
            role: role.to_string(),
            path: path.to_path_buf(),
            hash,
        });
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let hash = hash_file(path)?;
        self.outputs.push(FileRecord {
            role: role.to_string(),
            path: path.to_path_buf(),
            hash,
        });
        Ok(())
    }

    /// Writes `manifest.json` into `out_dir`.
    pub fn finish(self, out_dir: &Path) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            argv: self.argv,
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}
