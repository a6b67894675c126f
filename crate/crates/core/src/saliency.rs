//! Dataset-level saliency workflow: weak labels per speaker, detector
//! training on those labels, and frame scoring with a frozen detector.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GestureSample, PoseNormalizer, SequenceSaliencyLabel, SpeakerSaliency, Split};
use crate::detector::{logit_sequences, score_sequences, train_detector, DetectorConfig, DetectorEpoch, SalientPostureDetector};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ParamStore};

pub const DETECTOR_KIND: &str = "saliency-detector";

const SCORE_BATCH: usize = 32;

/// Fits resting pose and threshold per speaker on the samples of `split`.
pub fn fit_speaker_saliency(dataset: &Dataset, split: Split) -> Result<BTreeMap<String, SpeakerSaliency>> {
    let mut by_speaker: BTreeMap<String, Vec<&GestureSample>> = BTreeMap::new();
    for i in dataset.indices(split) {
        let s = &dataset.samples[i];
        by_speaker.entry(s.speaker_id.clone()).or_default().push(s);
    }
    if by_speaker.is_empty() {
        return Err(Error::Argument(format!("no {split:?} samples to fit saliency statistics")));
    }
    by_speaker
        .into_iter()
        .map(|(spk, ss)| Ok((spk, SpeakerSaliency::fit(&ss)?)))
        .collect()
}

/// Labels every sample of the dataset with its speaker's statistics.
pub fn label_dataset(
    dataset: &Dataset,
    fits: &BTreeMap<String, SpeakerSaliency>,
) -> Result<Vec<SequenceSaliencyLabel>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            fits.get(&s.speaker_id)
                .ok_or_else(|| Error::Argument(format!("no saliency statistics for speaker `{}`", s.speaker_id)))?
                .label(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectorHeader {
    config: DetectorConfig,
    body_points: usize,
    /// Per-speaker statistics over body keypoints.
    normalizers: BTreeMap<String, PoseNormalizer>,
}

/// A trained detector together with the pose statistics it expects.
#[derive(Debug)]
pub struct SaliencyModel {
    pub store: ParamStore,
    pub detector: SalientPostureDetector,
    header: DetectorHeader,
}

impl SaliencyModel {
    /// Trains on `samples` with one 0/1 label each.
    pub fn fit(samples: &[&GestureSample], labels: &[u8], cfg: &DetectorConfig) -> Result<(Self, Vec<DetectorEpoch>)> {
        cfg.validate()?;
        if samples.is_empty() || samples.len() != labels.len() {
            return Err(Error::Argument(format!("{} samples but {} labels", samples.len(), labels.len())));
        }
        let layout = samples[0].pose.layout().clone();
        let mut by_speaker: BTreeMap<&str, Vec<&GestureSample>> = BTreeMap::new();
        for s in samples {
            by_speaker.entry(&s.speaker_id).or_default().push(s);
        }
        let mut normalizers = BTreeMap::new();
        for (spk, ss) in by_speaker {
            let full = PoseNormalizer::fit(ss.iter().map(|s| s.pose.frames()))?;
            normalizers.insert(spk.to_string(), full.select(layout.body_indices()));
        }
        let mut store = ParamStore::new(cfg.seed, DType::F32);
        let detector = SalientPostureDetector::new(&mut store, cfg, layout.num_body())?;
        let model = Self {
            store,
            detector,
            header: DetectorHeader {
                config: cfg.clone(),
                body_points: layout.num_body(),
                normalizers,
            },
        };
        let poses = model.body_tensor(samples)?;
        let log = train_detector(&model.store, &model.detector, &poses, labels)?;
        Ok((model, log))
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.header.config
    }

    fn body_tensor(&self, samples: &[&GestureSample]) -> Result<Tensor> {
        let Some(first) = samples.first() else {
            return Err(Error::Argument("no samples to score".into()));
        };
        let t = first.len();
        let j = self.header.body_points;
        let mut data = Vec::with_capacity(samples.len() * t * j * 2);
        for s in samples {
            if s.len() != t {
                return Err(Error::Argument("samples must share one length".into()));
            }
            let norm = self
                .header
                .normalizers
                .get(&s.speaker_id)
                .ok_or_else(|| Error::Argument(format!("detector has no statistics for speaker `{}`", s.speaker_id)))?;
            data.extend(norm.normalize(s.pose.body().view())?.iter().copied());
        }
        Ok(Tensor::from_vec(data, (samples.len(), t, j, 2), &Device::Cpu)?)
    }

    /// Per-frame saliency in `[0, 1]` for each sample.
    pub fn score(&self, samples: &[&GestureSample]) -> Result<Vec<Vec<f32>>> {
        score_sequences(&self.detector, &self.body_tensor(samples)?, SCORE_BATCH)
    }

    /// Per-frame logits; ranks frames like [`Self::score`] without the ties
    /// that a saturated sigmoid produces in 32-bit floats.
    pub fn logits(&self, samples: &[&GestureSample]) -> Result<Vec<Vec<f32>>> {
        logit_sequences(&self.detector, &self.body_tensor(samples)?, SCORE_BATCH)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = serde_json::json!({ "detector": self.header });
        Ok(Checkpoint::new(DETECTOR_KIND, header, self.store.export()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        ckpt.expect_kind(DETECTOR_KIND, path)?;
        let header: DetectorHeader = ckpt.field("detector", path)?;
        let mut store = ParamStore::new(header.config.seed, DType::F32);
        let detector = SalientPostureDetector::new(&mut store, &header.config, header.body_points)?;
        store.import(&ckpt.tensors, &path.display().to_string())?;
        Ok(Self { store, detector, header })
    }
}
