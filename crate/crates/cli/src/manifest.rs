use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// An input file read fully into memory together with its digest.
pub struct Input {
    pub role: &'static str,
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub sha256: String,
}

impl Input {
    pub fn read(role: &'static str, path: &Path) -> Result<Self, CliError> {
        let bytes =
            fs::read(path).map_err(|e| CliError::Data(format!("cannot read {role} file {}: {e}", path.display())))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        Ok(Input {
            role,
            path: path.to_path_buf(),
            bytes,
            sha256,
        })
    }

    pub fn text(&self) -> Result<&str, CliError> {
        std::str::from_utf8(&self.bytes)
            .map_err(|_| CliError::Data(format!("{} file {} is not UTF-8", self.role, self.path.display())))
    }
}

#[derive(Debug, Serialize)]
struct InputEntry {
    role: String,
    path: String,
    sha256: String,
}

/// Provenance record written into every output directory before any result file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    config: BTreeMap<String, String>,
    inputs: Vec<InputEntry>,
    outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            tool: env!("CARGO_BIN_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records key-value config text (`key = value` lines).
    pub fn config_text(mut self, text: &str) -> Self {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.config.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        self
    }

    pub fn config_entry(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(mut self, input: &Input) -> Self {
        self.inputs.push(InputEntry {
            role: input.role.to_string(),
            path: input.path.display().to_string(),
            sha256: input.sha256.clone(),
        });
        self
    }

    pub fn outputs(mut self, names: &[&str]) -> Self {
        self.outputs = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Creates `dir` if needed and writes the manifest into it.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
