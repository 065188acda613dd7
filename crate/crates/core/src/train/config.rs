use serde::{Deserialize, Serialize};

use crate::data::augment::AugmentationConfig;
use crate::data::sampling::SamplingMode;
use crate::encoders::config::ModelConfig;
use crate::error::{Error, Result};
use crate::objectives::{PairReduction, TeacherConfig, DEFAULT_TAU_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Contrastive loss only; the teacher is never read or updated.
    InfonceOnly,
    /// `(contrastive + distillation) / 2`.
    #[default]
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub exclude_english: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::EnglishOnly,
            exclude_english: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub loss_mode: LossMode,
    pub pair_reduction: PairReduction,
    pub tau_s: f64,
    pub teacher: TeacherConfig,
    /// Keep the teacher center at zero.
    pub disable_centering: bool,
    /// Keep the contrastive temperature at its initial value.
    pub freeze_temperature: bool,
    /// Bounds on the learned contrastive temperature.
    pub tau_range: (f64, f64),
    pub sampling: SamplingConfig,
    pub augmentation: AugmentationConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 16,
            learning_rate: 2.5e-4,
            epochs: 200,
            warmup_epochs: 10,
            weight_decay: 0.05,
            betas: (0.9, 0.98),
            eps: 1e-6,
            loss_mode: LossMode::Combined,
            pair_reduction: PairReduction::Mean,
            tau_s: DEFAULT_TAU_S,
            teacher: TeacherConfig::default(),
            disable_centering: false,
            freeze_temperature: false,
            tau_range: (0.005, 5.0),
            sampling: SamplingConfig::default(),
            augmentation: AugmentationConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return bad("weight_decay must be >= 0 and eps > 0".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        if !(self.tau_s > 0.0) {
            return bad(format!("tau_s must be positive, got {}", self.tau_s));
        }
        let (lo, hi) = self.tau_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("tau_range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        self.teacher.validate()?;
        self.augmentation.validate()?;
        self.model.validate()?;
        if self.augmentation.global_crop_size != self.model.vision.image_size {
            return bad(format!(
                "augmentation.global_crop_size ({}) must equal model.vision.image_size ({})",
                self.augmentation.global_crop_size, self.model.vision.image_size
            ));
        }
        Ok(())
    }
}
