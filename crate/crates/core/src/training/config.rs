use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::body::BodyBranchConfig;
use crate::error::{Error, Result};
use crate::face::FaceBranchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lambda_r: f64,
    pub lambda_reg: f64,
    pub lambda_h: f64,
    pub lambda_con: f64,
    pub lambda_c: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub huber_delta: f64,
    /// Periodic checkpoint interval in epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
    /// Weight the consistency loss by detector saliency when a detector is given.
    pub saliency_weighting: bool,
    /// Alignment pairs drawn per batch item.
    pub pairs_per_item: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_r: 10.0,
            lambda_reg: 10.0,
            lambda_h: 20.0,
            lambda_con: 1.0,
            lambda_c: 1.0,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 300,
            seed: 0,
            huber_delta: 1.0,
            checkpoint_every: 10,
            saliency_weighting: true,
            pairs_per_item: 2,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_r", self.lambda_r),
            ("lambda_reg", self.lambda_reg),
            ("lambda_h", self.lambda_h),
            ("lambda_con", self.lambda_con),
            ("lambda_c", self.lambda_c),
        ];
        if let Some((name, _)) = lambdas.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("`{name}` must be a non-negative number")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("`batch_size` must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("`learning_rate` must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config("`huber_delta` must be positive".into()));
        }
        if self.pairs_per_item == 0 {
            return Err(Error::Config("`pairs_per_item` must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_r: self.lambda_r,
            lambda_reg: self.lambda_reg,
            lambda_h: self.lambda_h,
            lambda_con: self.lambda_con,
            lambda_c: self.lambda_c,
        }
    }
}

/// Architecture of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub body: BodyBranchConfig,
    pub face: FaceBranchConfig,
    /// Without the face branch the body path alone is trained and the face
    /// keypoints of generated sequences are left at the speaker mean.
    pub face_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            body: BodyBranchConfig::default(),
            face: FaceBranchConfig::default(),
            face_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.body.validate()?;
        if self.face.clip_len == 0 || self.face.classifier_hidden == 0 {
            return Err(Error::Config("face `clip_len` and `classifier_hidden` must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.face.positive_fraction) {
            return Err(Error::Config("face `positive_fraction` must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
