//! Output directory with atomic writes and a manifest.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use seizure_core::data::write_atomic;

use crate::config::Config;

#[derive(Debug, Serialize)]
pub struct InputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    inputs: &'a [InputEntry],
    outputs: &'a [String],
}

pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
    inputs: Vec<InputEntry>,
}

impl OutDir {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), inputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.path(name), bytes)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    /// Record an input file and its digest in the manifest.
    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputEntry { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(())
    }

    /// Echo the effective config and write the manifest last.
    pub fn finish(mut self, command: &str, cfg: &Config) -> anyhow::Result<()> {
        self.write("config.toml", cfg.to_toml()?.as_bytes())?;
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".to_string());
        let manifest = Manifest {
            tool: "seizure",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            inputs: &self.inputs,
            outputs: &outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.path("manifest.json"), text.as_bytes())?;
        Ok(())
    }
}
