//! Run configuration: one TOML document, every field optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::metrics::MetricConfig;
use crate::pairgen::PairConfig;
use crate::proposals::FilterConfig;
use crate::ranker::TrainConfig;
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Governs every stochastic step; overrides `train.seed`.
    pub seed: u64,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    pub jobs: usize,
    /// Also write each image's coarse mask during `rank`.
    pub coarse_masks: bool,
    pub filter: FilterConfig,
    pub retrieval: RetrievalConfig,
    pub pairs: PairConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub metrics: MetricConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: PathBuf::from("manifest.json"),
            out: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
            coarse_masks: false,
            filter: FilterConfig::default(),
            retrieval: RetrievalConfig::default(),
            pairs: PairConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            metrics: MetricConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses `path`; relative `manifest` and `out` resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.retrieval.validate()?;
        if !(self.pairs.epsilon >= 0.0) {
            return Err(Error::Config("pairs.epsilon must be >= 0".into()));
        }
        self.effective_train().validate()?;
        self.fusion.validate()?;
        self.metrics.validate()
    }

    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of every output-affecting setting.
    pub fn hash(&self) -> String {
        let canonical = PipelineConfig {
            out: PathBuf::new(),
            jobs: 0,
            train: self.effective_train(),
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config is always serializable");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}
