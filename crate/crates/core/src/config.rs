//! Run configuration: presets, JSON files and the model shape they imply.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BleuUnit;
use crate::model::ModelConfig;
use crate::sampler::SamplerConfig;
use crate::tensor::AdamConfig;
use crate::train::TrainConfig;

/// Model dimensions that do not depend on the vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub seq_len: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub text_dim: usize,
    pub text_len: usize,
}

/// Every tunable value of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: Architecture,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub bleu_unit: BleuUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    /// Small model that trains on a laptop CPU in minutes.
    pub fn desk() -> Self {
        RunConfig {
            arch: Architecture {
                seq_len: 32,
                emb_dim: 32,
                hidden: 128,
                layers: 2,
                heads: 4,
                text_dim: 64,
                text_len: 128,
            },
            train: TrainConfig {
                batch_size: 64,
                max_steps: 2000,
                adam: AdamConfig {
                    lr: 2e-3,
                    warmup: 100,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            },
            sampler: SamplerConfig::default(),
            bleu_unit: BleuUnit::Token,
        }
    }

    pub fn full() -> Self {
        RunConfig {
            arch: Architecture {
                seq_len: 256,
                emb_dim: 32,
                hidden: 1024,
                layers: 12,
                heads: 8,
                text_dim: 768,
                text_len: 256,
            },
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            bleu_unit: BleuUnit::Token,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.sampler
            .validate(self.train.tau, self.train.total_steps)?;
        self.model_config(1, 1).validate()
    }

    pub fn model_config(&self, vocab_size: usize, text_vocab_size: usize) -> ModelConfig {
        let a = &self.arch;
        ModelConfig {
            vocab_size,
            text_vocab_size,
            seq_len: a.seq_len,
            emb_dim: a.emb_dim,
            hidden: a.hidden,
            layers: a.layers,
            heads: a.heads,
            text_dim: a.text_dim,
            text_len: a.text_len,
            total_steps: self.train.total_steps,
        }
    }
}
