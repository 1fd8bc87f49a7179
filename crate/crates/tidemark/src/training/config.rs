//! Training hyperparameters and their schema.

use serde::{Deserialize, Serialize};

use crate::channel::CodecSpec;
use crate::error::{Error, Result};
use crate::losses::{FeatureMatchKind, LossWeights, RoleMode};

/// Everything the trainer needs to know besides model structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub mode: RoleMode,
    /// Codec conditions sampled once per minibatch; empty means identity.
    pub pool: Vec<CodecSpec>,
    pub batch_size: usize,
    pub crop_len: usize,
    /// Initial learning rate for every optimizer. Defaults by role: the
    /// observer setting trains at 2e-4, the collaborator setting at 2e-5
    /// (fast-converging but unstable at the higher rate).
    pub lr_init: Option<f64>,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    /// Multiplicative decay applied once per epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` means one nominal pass over the
    /// corpus (`ceil(clips / batch_size)`).
    pub steps_per_epoch: Option<usize>,
    /// Global gradient-norm cap for the watermark detector.
    pub clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub fm_kind: FeatureMatchKind,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            mode: RoleMode::Observer,
            pool: Vec::new(),
            batch_size: 16,
            crop_len: 65_536,
            lr_init: None,
            betas: (0.8, 0.99),
            weight_decay: 0.01,
            lr_decay: 0.999,
            epochs: 1,
            steps_per_epoch: None,
            clip_norm: 1.0,
            seed: 1234,
            weights: LossWeights::default(),
            fm_kind: FeatureMatchKind::default(),
        }
    }
}

impl TrainingConfig {
    /// The configured or role-default initial learning rate.
    pub fn lr_init(&self) -> f64 {
        self.lr_init.unwrap_or_else(|| default_lr(self.mode))
    }

    /// Learning rate in force during `epoch` (0-based): decayed once per
    /// completed epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr_init() * self.lr_decay.powi(epoch as i32)
    }

    /// Effective pool: identity when no codec conditions are configured.
    pub fn pool_specs(&self) -> Vec<CodecSpec> {
        if self.pool.is_empty() {
            vec![CodecSpec::none()]
        } else {
            self.pool.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_init() <= 0.0 {
            return Err(Error::Config("lr_init must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        if self.crop_len == 0 {
            return Err(Error::Config("crop_len must be positive".into()));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.weights.validate()?;
        for spec in &self.pool {
            spec.validate()?;
        }
        Ok(())
    }
}

fn default_lr(mode: RoleMode) -> f64 {
    match mode {
        RoleMode::Observer => 2e-4,
        RoleMode::Collaborator => 2e-5,
    }
}
