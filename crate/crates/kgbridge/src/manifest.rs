//! Run manifests: what a command read, what it wrote, and with which seed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_json, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_time_secs: f64,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<FileHash> {
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&read_file(path)?),
    })
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    config_hash: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    deterministic: bool,
    start: Instant,
}

impl ManifestBuilder {
    /// `config` is the raw config file when there is one; otherwise the
    /// argument list is hashed.
    pub fn new(command: &str, args: &[String], config: Option<&[u8]>, deterministic: bool) -> Self {
        let config_hash = match config {
            Some(b) => sha256_hex(b),
            None => sha256_hex(args.join("\u{1f}").as_bytes()),
        };
        ManifestBuilder {
            command: command.to_string(),
            args: args.to_vec(),
            config_hash,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            deterministic,
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        if !self.inputs.iter().any(|x| x == p) {
            self.inputs.push(p.to_path_buf());
        }
    }

    pub fn output(&mut self, p: &Path) {
        if !self.outputs.iter().any(|x| x == p) {
            self.outputs.push(p.to_path_buf());
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn finish(&self) -> Result<RunManifest> {
        let hash_all = |ps: &[PathBuf]| -> Result<Vec<FileHash>> {
            ps.iter().filter(|p| p.is_file()).map(|p| hash_file(p)).collect()
        };
        Ok(RunManifest {
            command: self.command.clone(),
            args: self.args.clone(),
            config_hash: self.config_hash.clone(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
            seed: self.seed,
            deterministic: self.deterministic,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    /// Writes `<command>.manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_json(&path, &self.finish()?)?;
        Ok(path)
    }
}
