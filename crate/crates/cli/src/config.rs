//! Layered configuration: defaults, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seizure_core::data::{EdfOptions, SynthConfig};
use seizure_core::eval::EvalConfig;
use seizure_core::online::{Hyperparams, OnlineOptions};
use seizure_core::train::{SplitSpec, TrainConfig, TuneGrid};
use seizure_core::ArithMode;

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub mode: ArithMode,
    pub seed: u64,
    pub synth: SynthConfig,
    pub edf: EdfOptions,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub tune: TuneGrid,
    /// Skip grid tuning during `train` and keep `hyperparams`.
    pub skip_tuning: bool,
    pub hyperparams: Hyperparams,
    pub online: OnlineOptions,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            mode: ArithMode::Fixed,
            seed: 1,
            synth: SynthConfig::default(),
            edf: EdfOptions::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            tune: TuneGrid::default(),
            skip_tuning: false,
            hyperparams: Hyperparams::default(),
            online: OnlineOptions::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {}", path.display(), e.message())).into())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing effective config")
    }

    /// SHA-256 of the effective config as written to the output directory.
    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Resolves relative input paths against the data directory, when set.
#[derive(Clone, Debug, Default)]
pub struct Inputs {
    pub data_dir: Option<PathBuf>,
}

impl Inputs {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: Config = toml::from_str("mode = \"float\"\n[hyperparams]\nws = 7\n[synth]\nduration_s = 60.0\n").unwrap();
        assert_eq!(cfg.mode, ArithMode::Float);
        assert_eq!(cfg.hyperparams.ws, 7);
        assert_eq!(cfg.hyperparams.ct, Hyperparams::default().ct);
        assert_eq!(cfg.synth.duration_s, 60.0);
        assert_eq!(cfg.synth.fs, SynthConfig::default().fs);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("bogus = 1\n").is_err());
        assert!(toml::from_str::<Config>("[train]\nlambda = 1.0\n").is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let cfg = Config::default();
        let back: Config = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        let other = Config { seed: 2, ..Config::default() };
        assert_ne!(cfg.hash().unwrap(), other.hash().unwrap());
    }

    #[test]
    fn data_dir_applies_to_relative_paths() {
        let inputs = Inputs { data_dir: Some("/data".into()) };
        assert_eq!(inputs.resolve(Path::new("a.csv")), Path::new("/data/a.csv"));
        assert_eq!(inputs.resolve(Path::new("/x/a.csv")), Path::new("/x/a.csv"));
        assert_eq!(Inputs::default().resolve(Path::new("a.csv")), Path::new("a.csv"));
    }
}
