//! Run configuration: one JSON document, every field optional.

use std::path::{Path, PathBuf};

use occode::calibrate::Grid;
use occode::ingest::{CombinationPolicy, SplitSpec};
use occode::nn::{ModelConfig, TrainConfig};
use occode::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw input CSV for `prepare`.
    pub data: Option<PathBuf>,
    /// One HISCO code per line.
    pub label_space: Option<PathBuf>,
    /// `from,to` CSV; the built-in table is used when absent.
    pub transliteration: Option<PathBuf>,
    /// `hisco,hiscam` CSV.
    pub hiscam: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: None,
            label_space: None,
            transliteration: None,
            hiscam: None,
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// `label_count` is taken from the label space.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub combination: CombinationPolicy,
    /// Sources whose records are combined into synthetic ones; empty means all.
    pub combine_sources: Vec<String>,
    pub split: SplitSpec,
    pub grid: Grid,
    /// Global seed. Every component seed is derived from it.
    pub seed: u64,
}

const TRAIN_STREAM: u64 = 1;
const COMBINE_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Pushes the global seed into the components and validates them.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.rng_seed = derive_seed(self.seed, &[TRAIN_STREAM]);
        self.combination.rng_seed = derive_seed(self.seed, &[COMBINE_STREAM]);
        self.split.rng_seed = derive_seed(self.seed, &[SPLIT_STREAM]);
        self.split.validate()?;
        self.grid.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.out("model.occn"))
    }
}

/// The path must exist; a missing input is a configuration error.
pub fn existing(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| CliError::config(format!("no {what} path given")))?;
    if !p.exists() {
        return Err(CliError::config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}
