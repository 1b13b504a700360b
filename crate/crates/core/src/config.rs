use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json};
use crate::data::SplitConfig;
use crate::derive::{MAX_CHAIN_IMAGES, MIN_CHAIN_IMAGES};
use crate::encoders::{ImageEncoderConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::eval::FusionConfig;
use crate::scoring::ModelConfig;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub min_images: usize,
    pub max_images: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            min_images: MIN_CHAIN_IMAGES,
            max_images: MAX_CHAIN_IMAGES,
        }
    }
}

/// Everything a run reads. Missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    /// Parameter initialization seed.
    pub model_seed: u64,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub fusion: FusionConfig,
    pub chain: ChainConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            model_seed: 1,
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            fusion: FusionConfig::default(),
            chain: ChainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Config {
    /// Small encoders and short training for the synthetic corpus on a CPU.
    pub fn desk() -> Self {
        let dim = 32;
        Self {
            model: ModelConfig {
                image_dim: dim,
                text_dim: dim,
                image_encoder: ImageEncoderConfig {
                    depth: 18,
                    base_width: 8,
                    input_size: 32,
                    output_dim: dim,
                },
                text_encoder: TextEncoderConfig { blocks: 1, ff_hidden: 0 },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 20,
                learning_rate: 1e-3,
                augment: None,
                ..TrainConfig::default()
            },
            synth: SynthConfig {
                embedding_dim: dim,
                ..SynthConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Config = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.chain.min_images > self.chain.max_images {
            return Err(Error::Parameter(format!("chain bounds {:?} are inverted", self.chain)));
        }
        if self.synth.embedding_dim != self.model.text_dim {
            log::warn!(
                "synth embedding_dim {} differs from model text_dim {}",
                self.synth.embedding_dim,
                self.model.text_dim
            );
        }
        Ok(())
    }
}
