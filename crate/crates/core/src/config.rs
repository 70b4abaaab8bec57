//! Run configuration: one JSON file with a section per stage of the pipeline.
//!
//! All randomness flows from `seed`; each consumer gets
//! `derive_seed(seed, <name>)`. The environment variable `SONOTRACE_SEED`
//! overrides the file's seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_json, DatasetConfig};
use crate::error::{Error, Result};
use crate::numerics::derive_seed;
use crate::sampler::SamplerParams;
use crate::schedule::NoiseSchedule;
use crate::training::{CascadeConfig, TrainConfig};

pub const SEED_ENV: &str = "SONOTRACE_SEED";
pub const RESOLVED_CONFIG_NAME: &str = "resolved-config.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// CSV of precomputed per-clip features; the toy extractor when absent.
    pub external_features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerParams,
    pub train: TrainConfig,
    pub cascade: CascadeConfig,
    pub dataset: DatasetConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
            schedule: NoiseSchedule::default(),
            sampler: SamplerParams::default(),
            train: TrainConfig::default(),
            cascade: CascadeConfig::default(),
            dataset: DatasetConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON (unknown keys rejected), applies the seed override and
    /// validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| {
                Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Argument(m) => Error::Config(m),
            other => other,
        };
        self.schedule.validate().map_err(wrap)?;
        self.sampler.validate().map_err(wrap)?;
        self.train.validate()?;
        self.train.architecture.validate().map_err(wrap)?;
        self.dataset.render.validate().map_err(wrap)?;
        self.cascade.stage0_sampler.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn module_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    /// Training section with its derived seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.module_seed("train"),
            ..self.train
        }
    }

    /// Hex SHA-256 of the canonical JSON with `output_dir` blanked, so the
    /// digest does not depend on where results are written.
    pub fn digest(&self) -> String {
        let blank = RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let text = serde_json::to_string(&blank).expect("serialisable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Writes the fully resolved config (all defaults materialised) into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_NAME);
        write_json(&path, self)?;
        Ok(path)
    }
}
