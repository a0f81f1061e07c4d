use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use intent_core::PipelineConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::CliError;

/// Record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
    /// sha256 of every input and output file.
    pub artifact_hashes: BTreeMap<String, String>,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hashes every artifact and writes `<dir>/<command>.manifest.json`.
    pub fn finish(self, config: &PipelineConfig, dir: &Path) -> Result<PathBuf, CliError> {
        let mut artifact_hashes = BTreeMap::new();
        for path in self.inputs.iter().chain(&self.outputs) {
            artifact_hashes.insert(path.display().to_string(), sha256_file(path)?);
        }
        let manifest = RunManifest {
            command: self.command.clone(),
            config: config.clone(),
            seed: config.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
            artifact_hashes,
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        intent_core::train::save_json(&manifest, &path)?;
        Ok(path)
    }
}
