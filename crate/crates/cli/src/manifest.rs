use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one run, written as `manifest.json` beside the outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects what a subcommand reads and writes.
pub struct Run {
    command: String,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Run {
    pub fn new(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            command: command.to_string(),
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path of output `name` inside the run directory; recorded for hashing.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.output(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, config: serde_json::Value) -> Result<()> {
        let hash_all = |paths: Vec<(String, PathBuf)>| -> Result<Vec<FileHash>> {
            paths.into_iter().map(|(path, full)| Ok(FileHash { sha256: sha256_file(&full)?, path })).collect()
        };
        let inputs = hash_all(self.inputs.iter().map(|p| (p.display().to_string(), p.clone())).collect())?;
        let mut names = self.outputs.clone();
        names.sort();
        names.dedup();
        let outputs = hash_all(names.into_iter().map(|n| (n.clone(), self.out.join(n))).collect())?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config,
            inputs,
            outputs,
            timings_ms: self.timings_ms,
            warnings: self.warnings,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.out.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
