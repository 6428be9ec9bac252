use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Versions {
    tcheby: &'static str,
    tcheby_cli: &'static str,
}

/// Manifest written next to every run's outputs. No timestamps, so reruns
/// compare byte-for-byte.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    versions: Versions,
    seed: u64,
    config_hash: String,
    config: &'a Value,
    run_config_hashes: &'a BTreeMap<String, String>,
    inputs: &'a BTreeMap<String, InputRecord>,
    outputs: &'a [String],
}

/// Output directory that records every file it hands out.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    inputs: BTreeMap<String, InputRecord>,
    pub run_hashes: BTreeMap<String, String>,
}

impl Output {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            inputs: BTreeMap::new(),
            run_hashes: BTreeMap::new(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(bytes)
    }

    /// Path for output `name` (relative, `/`-separated); creates parents.
    pub fn path(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(p)
    }

    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name)?;
        std::fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<std::fs::File>, CliError> {
        Ok(csv::Writer::from_path(self.path(name)?)?)
    }

    pub fn finish(mut self, command: &str, seed: u64, config: &Value) -> Result<(), CliError> {
        let config_hash = sha256_hex(&serde_json::to_vec(config)?);
        let mut outputs = self.files.clone();
        outputs.sort();
        let manifest = Manifest {
            command,
            versions: Versions {
                tcheby: tcheby::VERSION,
                tcheby_cli: env!("CARGO_PKG_VERSION"),
            },
            seed,
            config_hash,
            config,
            run_config_hashes: &self.run_hashes,
            inputs: &self.inputs,
            outputs: &outputs,
        };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.dir.join("manifest.json"), s)?;
        self.files.clear();
        Ok(())
    }
}
