//! Run configuration loaded from TOML. Every section is optional and falls
//! back to its defaults; command-line flags override individual keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::FbankConfig;
use crate::error::{Error, Result};
use crate::pipeline::{PipelineConfig, ScenarioParams};
use crate::resunet::ResUnetConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "RESUNET_SV_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub source_manifest: Option<PathBuf>,
    pub target_manifest: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub validation_trials: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Global seed; every random stream of a run derives from it.
    pub seed: u64,
    pub workers: usize,
    pub paths: Paths,
    pub fbank: FbankConfig,
    pub resunet: ResUnetConfig,
    pub pipeline: PipelineConfig,
    pub synthetic: ScenarioParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            paths: Paths::default(),
            fbank: FbankConfig::default(),
            resunet: ResUnetConfig::default(),
            pipeline: PipelineConfig::default(),
            synthetic: ScenarioParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.fbank.validate()?;
        self.resunet.validate()?;
        self.pipeline.validate()
    }

    /// Pipeline settings with the run seed applied.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            ..self.pipeline.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_and_partial_sections() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.pipeline.ahc_candidates = vec![10, 20];
        cfg.paths.output_dir = Some("out".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);

        let partial = "seed = 3\n[pipeline]\nmax_rounds = 2\n[resunet]\nresidual_blocks = 9\n";
        let c = RunConfig::from_toml(partial).unwrap();
        assert_eq!((c.seed, c.pipeline.max_rounds, c.resunet.residual_blocks), (3, 2, 9));
        assert_eq!(c.pipeline.min_count, 10);
        assert_eq!(c.pipeline().seed, 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(RunConfig::from_toml("workers = 0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[pipeline]\nmax_rounds = 0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
    }
}
