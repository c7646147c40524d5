//! Run configuration, read from TOML with sections `[features]`,
//! `[episode]`, `[encoder]`, `[loss]` and `[train]`. Every key is optional
//! and unknown keys are rejected.

use std::path::Path;

use metasr_core::objective::Mode;
use metasr_core::{EncoderConfig, EpisodeConfig, FeatureConfig, LossConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub features: FeatureConfig,
    pub episode: EpisodeConfig,
    pub encoder: EncoderConfig,
    pub loss: LossSection,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    SgdNesterov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayRule {
    /// Divide by `lr_decay_factor` after `patience` evaluations without a
    /// new best validation accuracy; stop at plateau `max_plateaus`.
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_rule: DecayRule,
    pub patience: usize,
    pub max_plateaus: usize,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    /// Validation identification episodes per evaluation.
    pub val_episodes: usize,
    /// Defaults to `min(10, validation speakers)`.
    pub val_n_way: Option<usize>,
    /// Items per fixed-length batch in vanilla mode; defaults to the item
    /// count of one episode.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::SgdNesterov,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_init: 0.1,
            lr_decay_factor: 10.0,
            lr_decay_rule: DecayRule::Plateau,
            patience: 5,
            max_plateaus: 3,
            max_steps: 100_000,
            checkpoint_every: 1000,
            eval_every: 500,
            val_episodes: 100,
            val_n_way: None,
            batch_size: None,
            seed: 0,
            mode: Mode::MetaGlobal,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Config::from_toml(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.loss.lambda, mode: self.train.mode }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.episode.validate()?;
        self.encoder.validate()?;
        self.loss().validate()?;
        if self.encoder.n_mels != self.features.n_mels {
            return Err(Error::Usage(format!(
                "encoder expects {} mel bands but features produce {}",
                self.encoder.n_mels, self.features.n_mels
            )));
        }
        let t = &self.train;
        let bad = |m: String| Err(Error::Usage(m));
        if !(t.lr_init > 0.0 && t.lr_init.is_finite()) {
            return bad(format!("lr_init must be positive, got {}", t.lr_init));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", t.momentum));
        }
        if t.weight_decay.is_nan() || t.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", t.weight_decay));
        }
        if t.lr_decay_factor.is_nan() || t.lr_decay_factor <= 1.0 {
            return bad(format!("lr_decay_factor must exceed 1, got {}", t.lr_decay_factor));
        }
        if t.patience == 0 || t.max_plateaus == 0 {
            return bad("patience and max_plateaus must be at least 1".into());
        }
        if t.max_steps == 0 || t.checkpoint_every == 0 || t.eval_every == 0 || t.val_episodes == 0 {
            return bad("max_steps, checkpoint_every, eval_every and val_episodes must be at least 1".into());
        }
        if t.val_n_way.is_some_and(|n| n < 2) || t.batch_size == Some(0) {
            return bad("val_n_way must be at least 2 and batch_size at least 1".into());
        }
        let (support, _, _) = self.episode.frame_lengths(&self.features);
        let (_, qmin, _) = self.episode.frame_lengths(&self.features);
        if qmin.min(support) < self.encoder.min_frames() {
            return bad(format!(
                "segments of {qmin} frames are shorter than the encoder minimum of {}",
                self.encoder.min_frames()
            ));
        }
        Ok(())
    }
}
