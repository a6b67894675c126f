//! Merged run configuration read from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::audio::MelConfig;
use crate::data::corpus::{DatasetOptions, DEFAULT_WINDOW};
use crate::data::pose::DEFAULT_FPS;
use crate::data::SynthConfig;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::beats::DEFAULT_BC_SIGMA;
use crate::eval::{FeatureExtractorConfig, OnsetConfig, SyncNetConfig};
use crate::training::{ModelConfig, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Frames per training sample.
    pub window: usize,
    pub fps: f32,
    pub mel: MelConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            fps: DEFAULT_FPS,
            mel: MelConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            window: self.window,
            fps: self.fps,
            mel: self.mel.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub bc_sigma: f64,
    pub onset_window_s: f64,
    pub onset_hop_s: f64,
    pub onset_threshold: f64,
    pub onset_min_gap_s: f64,
    pub fgd_extractor: FeatureExtractorConfig,
    pub syncnet: SyncNetConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let o = OnsetConfig::default();
        Self {
            bc_sigma: DEFAULT_BC_SIGMA,
            onset_window_s: o.window_s,
            onset_hop_s: o.hop_s,
            onset_threshold: o.relative_threshold,
            onset_min_gap_s: o.min_gap_s,
            fgd_extractor: FeatureExtractorConfig::default(),
            syncnet: SyncNetConfig::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn onsets(&self) -> OnsetConfig {
        OnsetConfig {
            window_s: self.onset_window_s,
            hop_s: self.onset_hop_s,
            relative_threshold: self.onset_threshold,
            min_gap_s: self.onset_min_gap_s,
        }
    }
}

/// Every tunable of a run. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides the seed of every section.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    /// Parses TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    /// Applies the top-level seed to every section.
    pub fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.detector.seed = seed;
            self.training.seed = seed;
            self.evaluation.fgd_extractor.seed = seed;
            self.evaluation.syncnet.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.window == 0 || !(self.data.fps > 0.0) {
            return Err(Error::Config("`data.window` and `data.fps` must be positive".into()));
        }
        self.model.validate()?;
        self.detector.validate()?;
        self.training.validate()?;
        self.evaluation.fgd_extractor.validate()?;
        self.evaluation.syncnet.validate()?;
        if !(self.evaluation.bc_sigma > 0.0) {
            return Err(Error::Config("`evaluation.bc_sigma` must be positive".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
