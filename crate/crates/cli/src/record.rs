//! Replication metadata written next to every command's outputs.

use std::path::{Path, PathBuf};

use adw_core::io::write_atomic;
use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub command: String,
    pub timestamp: String,
    pub tool_version: String,
    pub config_hash: String,
    /// Combined hash of every input file, see [`hash_inputs`].
    pub input_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

impl ExperimentRecord {
    pub fn new(
        command: &str,
        config: &RunConfig,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            input_hash: hash_inputs(&inputs)?,
            inputs,
            outputs,
            config: config.clone(),
        })
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

/// Git-style blob id: SHA-256 of `"blob <len>\0"` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Hash over the blob ids of `paths` in the given order. Order matters
/// because it reflects the command's argument order.
pub fn hash_inputs(paths: &[PathBuf]) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).with_context(|| format!("hashing input {}", p.display()))?;
        h.update(blob_hash(&bytes).as_bytes());
        h.update(b"\n");
    }
    Ok(hex(&h.finalize()))
}

/// `<dir>/run.json` for directory outputs, `<file>.run.json` otherwise.
pub fn record_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join("run.json")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        output.with_file_name(name)
    }
}
