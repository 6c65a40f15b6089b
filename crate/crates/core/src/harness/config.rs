use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterKind;
use crate::error::{Error, Result};
use crate::eval::DcfParams;
use crate::nn::{AamConfig, Position};

use super::corpus::CorpusSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub h: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: 32, h: 64, layers: 1, heads: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSettings {
    pub tag: AdapterKind,
    pub r: usize,
    /// Principal-column count; clamped to the weight size when larger.
    pub k: usize,
    /// Defaults to `0.1 · r`, i.e. a scale `alpha / r` of 0.1.
    pub alpha: Option<f64>,
}

impl Default for AdapterSettings {
    fn default() -> Self {
        AdapterSettings { tag: AdapterKind::Spectral, r: 16, k: 256, alpha: None }
    }
}

impl AdapterSettings {
    pub const DEFAULT_SCALE: f64 = 0.1;

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(Self::DEFAULT_SCALE * self.r as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl TrainConfig {
    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{what}.lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{what}.batch_size must be positive")));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 1e-3, batch_size: 8 }
    }
}

/// Loss-plateau stopping rule for pretraining.
pub const PLATEAU_TOL: f64 = 1e-4;
pub const PLATEAU_WINDOW: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub adapter: AdapterSettings,
    /// Attention projections that receive adapters, in every layer.
    pub positions: Vec<Position>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub aam: AamConfig,
    pub metric: DcfParams,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            adapter: AdapterSettings::default(),
            positions: vec![Position::Q, Position::K],
            pretrain: TrainConfig { epochs: 40, lr: 3e-3, batch_size: 10 },
            finetune: TrainConfig::default(),
            aam: AamConfig::default(),
            metric: DcfParams::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        let m = &self.model;
        if m.d == 0 || m.h == 0 || m.heads == 0 || !m.d.is_multiple_of(m.heads) {
            return Err(Error::Config(format!("invalid model dims {m:?}")));
        }
        self.aam.validate()?;
        self.metric.validate()?;
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        if self.positions.is_empty() && self.adapter.tag.has_deltas() {
            return Err(Error::Config("adapter positions must not be empty".into()));
        }
        let mut seen = self.positions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.positions.len() {
            return Err(Error::Config("adapter positions contain duplicates".into()));
        }
        if self.adapter.tag.has_deltas() && (self.adapter.alpha() <= 0.0 || self.adapter.alpha().is_nan()) {
            return Err(Error::Config("adapter alpha must be positive".into()));
        }
        Ok(())
    }

    /// Seeds for independent streams, all derived from `seed`.
    pub fn stream_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}
