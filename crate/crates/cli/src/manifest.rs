use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use shapedist::{Error, OptimizerConfig, Result};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    /// File path, or `<inline>` for JSON given on the command line.
    pub path: String,
    pub sha256: String,
}

/// Provenance record written for every run, successful or not.
#[derive(Debug, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub config: Option<OptimizerConfig>,
    pub outputs: Vec<PathBuf>,
    /// Headline numbers of the run, when there are any.
    pub results: Option<serde_json::Value>,
    pub wall_time: f64,
    pub exit_code: i32,
    pub error: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    /// Reads a file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn inline_input(&mut self, text: &str) {
        self.inputs.push(InputRecord {
            path: "<inline>".into(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }

    pub fn write_output(&mut self, path: &Path, contents: &str) -> Result<()> {
        fs::write(path, contents).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }
}

/// `report.json` → `report.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}
