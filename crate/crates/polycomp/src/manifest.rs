//! Run manifest: effective config, format versions and per-stage artifact hashes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::format::{self, CHECKPOINT_VERSION, DATASET_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub wall_seconds: f64,
    /// File name → SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Environment steps simulated by the stage.
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_versions: BTreeMap<String, u8>,
    /// Effective config of the most recent stage, as TOML.
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn empty() -> Self {
        let format_versions = [("dataset".to_string(), DATASET_VERSION), ("checkpoint".to_string(), CHECKPOINT_VERSION)].into();
        Self {
            format_versions,
            config: String::new(),
            stages: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        format::read_json(&path).map(Some)
    }

    /// Adds (or replaces) `stage` in the manifest of `dir` and rewrites it atomically.
    pub fn record(dir: &Path, stage: &str, config: String, record: StageRecord) -> Result<()> {
        let mut m = Self::load(dir)?.unwrap_or_else(Self::empty);
        m.config = config;
        m.stages.insert(stage.to_string(), record);
        format::write_json(&dir.join(MANIFEST_FILE), &m)
    }

    /// Latest recorded hash of an output named `name`, if any stage produced it.
    pub fn output_hash(&self, name: &str) -> Option<&str> {
        self.stages.values().find_map(|s| s.outputs.get(name).map(String::as_str))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Fails if the manifest next to `path` records a different hash for it.
pub fn verify_against_manifest(path: &Path) -> Result<String> {
    let hash = sha256_file(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    if let Some(m) = RunManifest::load(dir)? {
        if let Some(expected) = m.output_hash(&file_name(path)) {
            if expected != hash {
                return Err(CliError::Validation(format!(
                    "{} does not match its manifest hash (expected {expected}, found {hash})",
                    path.display()
                )));
            }
        }
    }
    Ok(hash)
}
