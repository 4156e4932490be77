//! Run manifests, stage cache keys and the CSV artifacts exchanged between
//! subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce the outputs of one subcommand run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: BTreeMap<String, PathBuf>,
    /// SHA-256 over the input files and the configuration.
    pub cache_key: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: BTreeMap<String, PathBuf>, cache_key: String, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs,
            cache_key,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_slice(&text).ok()
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(pcc_core::Error::from)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Streaming SHA-256 over labeled files and byte strings.
pub struct CacheKey(Sha256);

impl CacheKey {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update(stage.as_bytes());
        Self(h)
    }

    pub fn bytes(&mut self, label: &str, data: &[u8]) {
        self.0.update(label.as_bytes());
        self.0.update((data.len() as u64).to_le_bytes());
        self.0.update(data);
    }

    pub fn file(&mut self, label: &str, path: &Path) -> Result<(), CliError> {
        let data = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.bytes(label, &data);
        Ok(())
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// True when `dir` already holds a run with `key` and every listed output.
pub fn cached(dir: &Path, key: &str) -> bool {
    match RunManifest::read(dir) {
        Some(m) => m.cache_key == key && m.outputs.iter().all(|o| dir.join(o).is_file()),
        None => false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub cluster_id: u32,
    pub mean_time: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub cluster_id: u32,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    if !path.is_file() {
        return Err(CliError::Missing(format!("{} does not exist", path.display())));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
