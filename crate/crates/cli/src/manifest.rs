use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Subcommand;
use crate::config::LabConfig;
use crate::error::{CliError, CliResult};

/// An input file and the digest it had when the run read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the run directory.
    pub file: String,
    pub sha256: String,
}

/// Everything needed to re-run a subcommand and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub subcommand: Subcommand,
    pub config: LabConfig,
    pub seed: u64,
    /// Evaluate the base model in place of the unlearned one.
    pub identity: bool,
    pub inputs: BTreeMap<String, InputRecord>,
    pub outputs: Vec<OutputRecord>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn file_name(subcommand: Subcommand) -> String {
        format!("{}.manifest.json", subcommand.name())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(path, format!("not a run manifest: {e}")))
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(Self::file_name(self.subcommand));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic id from what determines the outputs.
pub fn run_id(subcommand: Subcommand, config: &LabConfig, identity: bool, inputs: &BTreeMap<String, InputRecord>) -> String {
    let digests: Vec<&str> = inputs.values().map(|r| r.sha256.as_str()).collect();
    let text = serde_json::to_string(&(subcommand, config, identity, digests)).expect("config serializes");
    sha256_hex(text.as_bytes())[..16].to_string()
}
