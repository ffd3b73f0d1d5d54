use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stochid_core::ann::TrainConfig;
use stochid_core::database::{AdmissibleSet, ConditioningConfig};
use stochid_core::forward::ForwardConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub q_obs: Option<PathBuf>,
    pub s: Vec<f64>,
    pub n_samples: usize,
    pub kde_points: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            q_obs: None,
            s: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            n_samples: 100_000,
            kde_points: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub n_d: usize,
    pub forward: ForwardConfig,
    pub admissible: AdmissibleSet,
    pub conditioning: ConditioningConfig,
    pub train: TrainConfig,
    pub robustness: RobustnessConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            n_d: 2000,
            forward: ForwardConfig::default(),
            admissible: AdmissibleSet::default(),
            conditioning: ConditioningConfig::default(),
            train: TrainConfig::default(),
            robustness: RobustnessConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(stochid_core::Error::from).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }
}
