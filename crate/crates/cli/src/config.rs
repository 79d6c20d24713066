use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oarseg::{FeatureSetId, PhantomSpec, PipelineConfig};
use serde::{Deserialize, Serialize};

/// Everything a command needs, loadable from one JSON file.
///
/// Missing keys take their defaults; unknown keys are rejected. Command-line
/// flags override values read from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Training, ROI and threshold settings.
    pub pipeline: PipelineConfig,
    /// Phantom used by `phantom`, and by `train`/`loocv` when no dataset is given.
    pub phantom: PhantomSpec,
    /// Feature set, `aefv` by default.
    pub set: FeatureSetId,
    /// Organ id; `loocv` runs every organ when unset.
    pub organ: Option<String>,
    /// Dataset directory holding a `manifest.json`.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Concurrent LOOCV folds.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            phantom: PhantomSpec::default(),
            set: FeatureSetId::AeFv,
            organ: None,
            data: None,
            out: None,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.train.seed = seed;
        self.phantom.seed = seed;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
