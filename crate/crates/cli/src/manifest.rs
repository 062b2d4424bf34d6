use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

impl InputRef {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(InputRef { path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

/// Everything needed to rerun a command; no timestamps, so identical runs
/// write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputRef>,
    pub output: String,
    /// Output file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: impl Serialize, output: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            version: format!("gdv {}", env!("CARGO_PKG_VERSION")),
            seed,
            config: serde_json::to_value(config).expect("config serialises"),
            inputs: BTreeMap::new(),
            output: output.display().to_string(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(role.to_string(), InputRef::of(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.artifacts.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises") + "\n";
        std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
    }
}
