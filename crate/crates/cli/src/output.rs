//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Every file goes through here so the manifest lists all of them.
pub struct OutDir {
    root: PathBuf,
    files: Vec<OutputFile>,
    started_at: String,
}

impl OutDir {
    pub fn new(root: PathBuf) -> Self {
        OutDir { root, files: Vec::new(), started_at: now() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))
    }

    /// Writes `rel` under the root, replacing any previous file.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(OutputFile { path: rel.to_string(), bytes: bytes.len(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(())
    }

    /// Writes the manifest last, through a rename, so its presence marks a
    /// complete run.
    pub fn finish(self, command: &str, scenario_hash: &str, seed: Option<u64>) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            scenario_hash: scenario_hash.to_string(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let tmp = self.root.join(".manifest.json.tmp");
        fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        let path = self.root.join(MANIFEST_NAME);
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
