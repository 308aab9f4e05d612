//! Experiment configuration, read from TOML.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::shift::ShiftSpec;
use crate::error::{Error, Result};
use crate::nn::Backbone;
use crate::peft::Method;

/// Synthetic source-domain data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub channels: usize,
    pub length: usize,
    pub per_class: usize,
}

/// Target domain: fresh windows from the same class families, then shifted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub per_class: usize,
    pub shift: ShiftSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-2,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub method: Method,
    /// TT target rank for LoRA-Edge.
    pub rank: usize,
    /// Inner rank for LoRA-C and linear LoRA.
    pub lora_rank: usize,
    pub steps: usize,
    pub batch: usize,
    /// Falls back to the method's default learning rate.
    pub lr: Option<f64>,
    pub eval_interval: usize,
    pub train_fraction: f64,
    pub train_head: bool,
    /// Initial variance of the LoRA `A` factor.
    pub lora_sigma2: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            method: Method::LoraEdge,
            rank: 2,
            lora_rank: 1,
            steps: 50,
            batch: 64,
            lr: None,
            eval_interval: 1,
            train_fraction: 0.8,
            train_head: false,
            lora_sigma2: 1e-3,
        }
    }
}

impl FinetuneConfig {
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.method.default_lr())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        if self.lr().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr()
            )));
        }
        Ok(())
    }
}

/// Grid for the initialization-sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lrs: Vec<f64>,
    pub sigma2s: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lrs: vec![1e-3, 3e-3, 1e-2],
            sigma2s: vec![1e-3, 1e-2, 1e-1],
            seeds: vec![0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub backbone: Backbone,
    pub data: DataConfig,
    pub target: TargetConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.finetune.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}
