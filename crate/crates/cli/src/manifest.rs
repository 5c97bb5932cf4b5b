//! Run manifests: every artifact directory gets exactly one `manifest.json`
//! recording the command, its fully resolved arguments, the SHA-256 of every
//! input file, the code version, and timestamps. A manifest is sufficient to
//! re-run the command (`rerun` subcommand).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub created_unix_s: u64,
    /// Input files by role (dataset, config, checkpoint, presets, ...).
    pub inputs: BTreeMap<String, InputRecord>,
    /// Fully resolved command arguments; enough to re-run without the
    /// original flags.
    pub resolved: Value,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::runtime(format!("hashing {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, resolved: Value) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: BTreeMap::new(),
            resolved,
        }
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: sha256_file(path)?,
            },
        );
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("serializing manifest: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))
    }

    /// Confirms every recorded input file still hashes the same; re-running
    /// against changed inputs would silently produce different artifacts.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for (role, rec) in &self.inputs {
            let now = sha256_file(Path::new(&rec.path))?;
            if now != rec.sha256 {
                return Err(CliError::runtime(format!(
                    "input {role} ({}) changed since the manifest was written",
                    rec.path
                )));
            }
        }
        Ok(())
    }
}
