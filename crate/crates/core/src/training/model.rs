//! The generator (body branch, face branch, alignment classifier), its
//! input normalization, batching and per-step loss evaluation.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainingConfig};
use super::losses::{huber_part_loss, reconstruction_loss, regression_loss, LossComponents};
use crate::body::{consistency_loss, BodyBranch};
use crate::data::{GestureSample, MelConfig, PoseNormalizer, PoseSequence, SkeletonLayout, SpeechFeatureSet};
use crate::error::{Error, Result};
use crate::face::{alignment_loss, gather_pairs, pair_accuracy, sample_feature_pairs, AlignmentClassifier, FaceBranch};
use crate::nn::{Checkpoint, NamedTensor, ParamStore};

pub const MODEL_KIND: &str = "gesture-model";

const MIN_FEATURE_STD: f32 = 1e-4;

/// Per-column standardization of `T x C` feature matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    pub fn fit<'a, I>(features: I) -> Result<Self>
    where
        I: IntoIterator<Item = ArrayView2<'a, f32>>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for f in features {
            if sum.is_empty() {
                sum = vec![0.0; f.ncols()];
                sq = vec![0.0; f.ncols()];
            } else if f.ncols() != sum.len() {
                return Err(Error::Argument("feature matrices disagree in width".into()));
            }
            for row in f.outer_iter() {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += v as f64 * v as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Argument("no feature frames to fit".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n as f64 - m * m).max(0.0).sqrt() as f32;
                if s < MIN_FEATURE_STD { 1.0 } else { s }
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, f: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if f.ncols() != self.mean.len() {
            return Err(Error::Argument(format!(
                "features have {} columns, statistics cover {}",
                f.ncols(),
                self.mean.len()
            )));
        }
        let mut out = f.to_owned();
        for mut row in out.outer_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(out)
    }
}

/// Everything needed to map raw inputs to network space and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Per-speaker statistics over all keypoints.
    pub pose: BTreeMap<String, PoseNormalizer>,
    pub mel: FeatureStats,
    pub asr: Option<FeatureStats>,
}

impl Normalization {
    /// Fits on the given (training) samples.
    pub fn fit(samples: &[&GestureSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("cannot fit normalization without samples".into()));
        }
        let mut by_speaker: BTreeMap<&str, Vec<&GestureSample>> = BTreeMap::new();
        for s in samples {
            by_speaker.entry(&s.speaker_id).or_default().push(s);
        }
        let mut pose = BTreeMap::new();
        for (spk, ss) in by_speaker {
            pose.insert(spk.to_string(), PoseNormalizer::fit(ss.iter().map(|s| s.pose.frames()))?);
        }
        let mel = FeatureStats::fit(samples.iter().map(|s| s.audio.mel().view()))?;
        let with_asr = samples.iter().filter(|s| s.audio.asr().is_some()).count();
        let asr = match with_asr {
            0 => None,
            n if n == samples.len() => Some(FeatureStats::fit(samples.iter().filter_map(|s| s.audio.asr().map(|a| a.view())))?),
            _ => return Err(Error::Argument("ASR features present on some samples only".into())),
        };
        Ok(Self { pose, mel, asr })
    }

    pub fn speaker(&self, speaker: &str) -> Result<&PoseNormalizer> {
        self.pose
            .get(speaker)
            .ok_or_else(|| Error::Argument(format!("no pose statistics for speaker `{speaker}`")))
    }

    /// The speaker to use when none is named: the only one, if unique.
    pub fn default_speaker(&self) -> Result<&str> {
        match self.pose.keys().collect::<Vec<_>>().as_slice() {
            [only] => Ok(only.as_str()),
            _ => Err(Error::Argument(format!(
                "model knows {} speakers; name one of {:?}",
                self.pose.len(),
                self.pose.keys().collect::<Vec<_>>()
            ))),
        }
    }
}

/// Sizes the generator is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub body_points: usize,
    pub face_points: usize,
    pub n_mels: usize,
    pub asr_dim: usize,
}

/// Generator parameters and modules. Parameter names start with `body.`,
/// `face.` or `align.`.
#[derive(Debug)]
pub struct GestureModel {
    pub store: ParamStore,
    pub body: BodyBranch,
    pub face: Option<(FaceBranch, AlignmentClassifier)>,
    pub config: ModelConfig,
    pub dims: ModelDims,
}

impl GestureModel {
    pub fn new(config: &ModelConfig, dims: ModelDims, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let body = BodyBranch::new(&mut store, "body", &config.body, dims.body_points, dims.n_mels, dims.asr_dim)?;
        let face = if config.face_enabled {
            let branch = FaceBranch::new(&mut store, "face", &config.body, dims.face_points, dims.n_mels)?;
            let classifier = AlignmentClassifier::new(&mut store, "align", config.body.latent_dim, config.face.classifier_hidden)?;
            Some((branch, classifier))
        } else {
            None
        };
        Ok(Self {
            store,
            body,
            face,
            config: config.clone(),
            dims,
        })
    }

    /// Parameter prefixes updated by the optimizer.
    pub fn prefixes(&self) -> Vec<&'static str> {
        if self.face.is_some() {
            vec!["body.", "face.", "align."]
        } else {
            vec!["body."]
        }
    }

    /// Losses for one batch. `rng` draws the alignment pairs.
    pub fn losses<R: Rng>(&self, batch: &Batch, cfg: &TrainingConfig, rng: &mut R) -> Result<StepOutput> {
        let zp = self.body.encode_pose(&batch.body)?;
        let za = self.body.encode_audio(&batch.mel, batch.asr.as_ref())?;
        let recon = reconstruction_loss(&self.body.decode(&zp)?, &batch.body)?;
        let pred_body = self.body.decode(&za)?;
        let saliency = if cfg.saliency_weighting { batch.saliency.as_ref() } else { None };
        let con = consistency_loss(&zp, &za, saliency, self.config.body.epsilon)?;

        let mut out = StepOutput {
            parts: LossComponents {
                recon: Some(recon),
                con: Some(con),
                ..Default::default()
            },
            pair_accuracy: None,
        };
        match &self.face {
            None => {
                out.parts.reg = Some(regression_loss(&pred_body, &batch.body, None)?);
                out.parts.huber = Some(huber_part_loss(&pred_body, &batch.body, None, cfg.huber_delta)?);
            }
            Some((face, classifier)) => {
                let zf = face.encode_audio(&batch.mel)?;
                let pred_face = face.decode(&zf)?;
                out.parts.reg = Some(regression_loss(&pred_body, &batch.body, Some((&pred_face, &batch.face)))?);
                out.parts.huber = Some(huber_part_loss(
                    &pred_body,
                    &batch.body,
                    Some((&pred_face, &batch.face)),
                    cfg.huber_delta,
                )?);
                let zb = if self.config.face.align_updates_body_audio { za.clone() } else { za.detach() };
                let (b, t, _) = zb.dims3()?;
                let pairs = sample_feature_pairs(
                    rng,
                    b,
                    t,
                    self.config.face.clip_len,
                    b * cfg.pairs_per_item,
                    self.config.face.positive_fraction,
                )?;
                let (x, classes) = gather_pairs(&zb, &zf, &pairs, self.config.face.clip_len)?;
                let probs = classifier.forward(&x)?;
                out.pair_accuracy = Some(pair_accuracy(&probs, &classes)?);
                out.parts.align = Some(alignment_loss(&probs, &classes)?);
            }
        }
        Ok(out)
    }

    /// Decodes normalized body `(B, T, J_b, 2)` and, with the face branch,
    /// face `(B, T, J_f, 2)` keypoints from audio.
    pub fn predict(&self, mel: &Tensor, asr: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
        let body = self.body.decode(&self.body.encode_audio(mel, asr)?)?;
        let face = match &self.face {
            Some((f, _)) => Some(f.decode(&f.encode_audio(mel)?)?),
            None => None,
        };
        Ok((body, face))
    }
}

#[derive(Debug)]
pub struct StepOutput {
    pub parts: LossComponents,
    pub pair_accuracy: Option<f64>,
}

/// One minibatch in network space.
#[derive(Debug, Clone)]
pub struct Batch {
    pub body: Tensor,
    pub face: Tensor,
    pub mel: Tensor,
    pub asr: Option<Tensor>,
    /// Per-frame saliency weights `(B, T)`.
    pub saliency: Option<Tensor>,
}

/// A split held as stacked tensors so batches are cheap index selections.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    all: Batch,
    len: usize,
    frames: usize,
}

fn stack3(arrays: &[Array3<f32>], dtype: DType) -> Result<Tensor> {
    let (t, j, c) = arrays[0].dim();
    let mut data = Vec::with_capacity(arrays.len() * t * j * c);
    for a in arrays {
        data.extend(a.iter().copied());
    }
    Ok(Tensor::from_vec(data, (arrays.len(), t, j, c), &Device::Cpu)?.to_dtype(dtype)?)
}

fn stack2(arrays: &[Array2<f32>], dtype: DType) -> Result<Tensor> {
    let (t, c) = arrays[0].dim();
    let mut data = Vec::with_capacity(arrays.len() * t * c);
    for a in arrays {
        data.extend(a.iter().copied());
    }
    Ok(Tensor::from_vec(data, (arrays.len(), t, c), &Device::Cpu)?.to_dtype(dtype)?)
}

impl PreparedSet {
    /// Normalizes and stacks `samples`, which must share one length.
    /// `saliency` holds one weight per frame per sample.
    pub fn new(
        samples: &[&GestureSample],
        norm: &Normalization,
        layout: &SkeletonLayout,
        saliency: Option<&[Vec<f32>]>,
        dtype: DType,
    ) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Argument("no samples to prepare".into()));
        };
        let frames = first.len();
        if samples.iter().any(|s| s.len() != frames || s.audio.len() != frames) {
            return Err(Error::Argument("samples in a set must share one length".into()));
        }
        let mut bodies = Vec::with_capacity(samples.len());
        let mut faces = Vec::with_capacity(samples.len());
        let mut mels = Vec::with_capacity(samples.len());
        let mut asrs = Vec::new();
        for s in samples {
            let z = norm.speaker(&s.speaker_id)?.normalize(s.pose.frames())?;
            bodies.push(z.select(Axis(1), layout.body_indices()));
            faces.push(z.select(Axis(1), layout.face_indices()));
            mels.push(norm.mel.apply(s.audio.mel().view())?);
            match (&norm.asr, s.audio.asr()) {
                (Some(st), Some(a)) => asrs.push(st.apply(a.view())?),
                (None, None) => {}
                _ => return Err(Error::Argument(format!("sample {} disagrees with the model about ASR features", s.segment_id))),
            }
        }
        let saliency = match saliency {
            None => None,
            Some(w) => {
                if w.len() != samples.len() || w.iter().any(|r| r.len() != frames) {
                    return Err(Error::Argument("saliency needs one weight per frame per sample".into()));
                }
                let data: Vec<f32> = w.iter().flatten().copied().collect();
                Some(Tensor::from_vec(data, (samples.len(), frames), &Device::Cpu)?.to_dtype(dtype)?)
            }
        };
        Ok(Self {
            all: Batch {
                body: stack3(&bodies, dtype)?,
                face: stack3(&faces, dtype)?,
                mel: stack2(&mels, dtype)?,
                asr: if asrs.is_empty() { None } else { Some(stack2(&asrs, dtype)?) },
                saliency,
            },
            len: samples.len(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn all(&self) -> &Batch {
        &self.all
    }

    pub fn batch(&self, items: &[u32]) -> Result<Batch> {
        let idx = Tensor::from_slice(items, items.len(), &Device::Cpu)?;
        let pick = |t: &Tensor| t.index_select(&idx, 0);
        Ok(Batch {
            body: pick(&self.all.body)?,
            face: pick(&self.all.face)?,
            mel: pick(&self.all.mel)?,
            asr: self.all.asr.as_ref().map(pick).transpose()?,
            saliency: self.all.saliency.as_ref().map(pick).transpose()?,
        })
    }
}

/// Header fields of a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub dims: ModelDims,
    pub layout: SkeletonLayout,
    pub fps: f32,
    /// Mel settings the audio features were computed with.
    pub mel: MelConfig,
    pub normalization: Normalization,
    /// Epochs completed.
    pub epoch: usize,
    pub best_val: Option<f64>,
}

/// A generator ready for inference.
#[derive(Debug)]
pub struct TrainedModel {
    pub model: GestureModel,
    pub header: ModelHeader,
    layout: Arc<SkeletonLayout>,
}

pub(crate) const ADAM_PREFIX: &str = "adam.";

impl TrainedModel {
    pub fn new(model: GestureModel, header: ModelHeader) -> Self {
        let layout = Arc::new(header.layout.clone());
        Self { model, header, layout }
    }

    /// Restores the parameters of a checkpoint, ignoring optimizer state.
    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<Self> {
        ckpt.expect_kind(MODEL_KIND, path)?;
        let header: ModelHeader = ckpt.field("model_header", path)?;
        let model = GestureModel::new(&header.model, header.dims, 0, DType::F32)?;
        let params: BTreeMap<String, NamedTensor> = ckpt
            .tensors
            .iter()
            .filter(|(k, _)| !k.starts_with(ADAM_PREFIX))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        model.store.import(&params, &path.display().to_string())?;
        Ok(Self::new(model, header))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?, path)
    }

    pub fn layout(&self) -> &Arc<SkeletonLayout> {
        &self.layout
    }

    /// Full-skeleton gestures for `audio`. `speaker` selects the pose
    /// statistics; it may be omitted for single-speaker models.
    pub fn generate(&self, audio: &SpeechFeatureSet, speaker: Option<&str>) -> Result<PoseSequence> {
        if audio.is_empty() {
            return Err(Error::Argument("audio must span at least one frame".into()));
        }
        let norm = &self.header.normalization;
        let spk = match speaker {
            Some(s) => s,
            None => norm.default_speaker()?,
        };
        let pose_norm = norm.speaker(spk)?;
        if audio.mel().ncols() != self.header.dims.n_mels {
            return Err(Error::Argument(format!(
                "model expects {} mel bands, got {}",
                self.header.dims.n_mels,
                audio.mel().ncols()
            )));
        }
        let dtype = self.model.store.dtype();
        let t = audio.len();
        let mel = stack2(&[norm.mel.apply(audio.mel().view())?], dtype)?;
        let asr = match (&norm.asr, audio.asr()) {
            (Some(st), Some(a)) => Some(stack2(&[st.apply(a.view())?], dtype)?),
            (None, _) => None,
            (Some(_), None) => return Err(Error::Argument("model was trained with ASR features; none supplied".into())),
        };
        let (body, face) = self.model.predict(&mel, asr.as_ref())?;
        let to_array = |x: &Tensor, j: usize| -> Result<Array3<f32>> {
            let v = x.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            Ok(Array3::from_shape_vec((t, j, 2), v).expect("decoder shape"))
        };
        let layout = &self.layout;
        let body = to_array(&body, layout.num_body())?;
        let face = match face {
            Some(f) => to_array(&f, layout.num_face())?,
            None => Array3::zeros((t, layout.num_face(), 2)),
        };
        let fused = PoseSequence::fuse(body.view(), face.view(), self.header.fps, layout.clone())?;
        PoseSequence::new(pose_norm.denormalize(fused.frames())?, self.header.fps, layout.clone())
    }
}
