//! Run manifest: what produced a run directory and what it contains.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    /// Config snapshot, `key -> value` in the text format.
    pub config: BTreeMap<String, String>,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    /// SHA-256 of the dataset content.
    pub dataset_fingerprint: String,
    /// Latest invocation of each command.
    pub commands: BTreeMap<String, CommandRecord>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(dataset_fingerprint: String) -> Self {
        RunManifest {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_fingerprint,
            commands: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    /// `Ok(None)` when the directory has no manifest yet.
    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(CliError::new(
                    Stage::Manifest,
                    format!("{}: {e}", path.display()),
                ))
            }
        };
        serde_json::from_str(&text).map(Some).map_err(|e| {
            CliError::new(
                Stage::Manifest,
                format!("{} is corrupt: {e}", path.display()),
            )
        })
    }

    pub fn load_required(dir: &Path) -> Result<Self, CliError> {
        Self::load(dir)?.ok_or_else(|| {
            CliError::new(
                Stage::Manifest,
                format!("no {MANIFEST_FILE} in {}", dir.display()),
            )
        })
    }

    /// Fails with the first listed artifact that is missing.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for a in &self.artifacts {
            let p = dir.join(a);
            if !p.is_file() {
                return Err(CliError::new(
                    Stage::Manifest,
                    format!("artifact listed in manifest is missing: {}", p.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn add_artifacts(&mut self, dir: &Path, files: &[PathBuf]) {
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(f);
            self.artifacts
                .push(rel.to_string_lossy().replace('\\', "/"));
        }
        self.artifacts.sort();
        self.artifacts.dedup();
    }

    /// Writes to a temporary file and renames it into place.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        self.verify(dir)?;
        let fail =
            |e: std::io::Error| CliError::new(Stage::Manifest, format!("{}: {e}", dir.display()));
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::new(Stage::Manifest, e.to_string()))?;
        std::fs::write(&tmp, text).map_err(fail)?;
        std::fs::rename(&tmp, dir.join(MANIFEST_FILE)).map_err(fail)
    }
}
