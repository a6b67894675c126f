//! Face synthesis branch and the face-body temporal alignment classifier.

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::{AudioEncoder, BodyBranchConfig, PoseDecoder};
use crate::detector::PROB_CLAMP;
use crate::error::{Error, Result};
use crate::nn::ops::{leaky_relu, softmax_last};
use crate::nn::{Gru, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceBranchConfig {
    /// Clip length `T_c` of the sampled alignment pairs.
    pub clip_len: usize,
    pub positive_fraction: f64,
    pub classifier_hidden: usize,
    /// Whether the alignment loss updates the body audio encoder.
    pub align_updates_body_audio: bool,
}

impl Default for FaceBranchConfig {
    fn default() -> Self {
        Self {
            clip_len: 16,
            positive_fraction: 0.5,
            classifier_hidden: 256,
            align_updates_body_audio: true,
        }
    }
}

/// Mel-only audio encoder and decoder with parameters of their own.
#[derive(Debug, Clone)]
pub struct FaceBranch {
    audio: AudioEncoder,
    decoder: PoseDecoder,
}

impl FaceBranch {
    /// Same structure as the body branch (no ASR track), separate parameters.
    pub fn new(store: &mut ParamStore, name: &str, cfg: &BodyBranchConfig, face_points: usize, n_mels: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            audio: AudioEncoder::new(store, &format!("{name}.audio"), cfg, n_mels, 0)?,
            decoder: PoseDecoder::new(store, &format!("{name}.decoder"), cfg.latent_dim, cfg.decoder_hidden, face_points)?,
        })
    }

    /// Mel `(B, T, M)` to `Z^f_a (B, T, D)`.
    pub fn encode_audio(&self, mel: &Tensor) -> Result<Tensor> {
        self.audio.forward(mel, None)
    }

    /// `(B, T, D)` to face keypoints `(B, T, J_f, 2)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }
}

/// One sampled pair of latent clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPair {
    /// Batch item the clips come from.
    pub item: usize,
    pub t_body: usize,
    pub t_face: usize,
}

impl AlignmentPair {
    pub fn aligned(&self) -> bool {
        self.t_body == self.t_face
    }

    /// One-hot label: `[1, 0]` when aligned.
    pub fn one_hot(&self) -> [f32; 2] {
        if self.aligned() { [1.0, 0.0] } else { [0.0, 1.0] }
    }
}

/// Draws `n_pairs` clip pairs over `items` sequences of `frames` frames:
/// exactly `round(n_pairs · positive_fraction)` aligned pairs, the rest with
/// distinct offsets, in shuffled order.
pub fn sample_feature_pairs<R: Rng>(
    rng: &mut R,
    items: usize,
    frames: usize,
    clip_len: usize,
    n_pairs: usize,
    positive_fraction: f64,
) -> Result<Vec<AlignmentPair>> {
    if clip_len == 0 || clip_len >= frames {
        return Err(Error::Argument(format!(
            "clip length {clip_len} must be in [1, {frames})"
        )));
    }
    if items == 0 {
        return Err(Error::Argument("no sequences to sample pairs from".into()));
    }
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::Argument("positive fraction must lie in [0, 1]".into()));
    }
    let max_start = frames - clip_len;
    let n_pos = (n_pairs as f64 * positive_fraction).round() as usize;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let item = i % items;
        let t_body = rng.random_range(0..=max_start);
        let t_face = if i < n_pos {
            t_body
        } else {
            loop {
                let t = rng.random_range(0..=max_start);
                if t != t_body {
                    break t;
                }
            }
        };
        pairs.push(AlignmentPair { item, t_body, t_face });
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

/// Stacks the clips of `pairs` into `(N, T_c, 2D)` (body ⊕ face per frame)
/// plus `(N,)` class indices (0 = aligned).
pub fn gather_pairs(zb: &Tensor, zf: &Tensor, pairs: &[AlignmentPair], clip_len: usize) -> Result<(Tensor, Tensor)> {
    if zb.dims() != zf.dims() {
        return Err(Error::Argument("body and face latents differ in shape".into()));
    }
    let mut clips = Vec::with_capacity(pairs.len());
    for p in pairs {
        let b = zb.get(p.item)?.narrow(0, p.t_body, clip_len)?;
        let f = zf.get(p.item)?.narrow(0, p.t_face, clip_len)?;
        clips.push(Tensor::cat(&[&b, &f], D::Minus1)?);
    }
    let labels: Vec<u32> = pairs.iter().map(|p| (!p.aligned()) as u32).collect();
    Ok((
        Tensor::stack(&clips, 0)?,
        Tensor::from_vec(labels, pairs.len(), zb.device())?,
    ))
}

/// Recurrent layer over the concatenated pair, three dense layers, 2-way softmax.
#[derive(Debug, Clone)]
pub struct AlignmentClassifier {
    gru: Gru,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl AlignmentClassifier {
    pub fn new(store: &mut ParamStore, name: &str, latent_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            gru: Gru::new(store, &format!("{name}.gru"), 2 * latent_dim, hidden)?,
            fc1: Linear::new(store, &format!("{name}.fc1"), hidden, hidden)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, hidden)?,
            fc3: Linear::new(store, &format!("{name}.fc3"), hidden, 2)?,
        })
    }

    /// `(N, T_c, 2D)` to class probabilities `(N, 2)`.
    pub fn forward(&self, pairs: &Tensor) -> Result<Tensor> {
        let h = self.gru.last_state(pairs)?;
        let h = leaky_relu(&self.fc1.forward(&h)?)?;
        let h = leaky_relu(&self.fc2.forward(&h)?)?;
        softmax_last(&self.fc3.forward(&h)?)
    }
}

/// Mean cross-entropy of probabilities `(N, 2)` against class indices `(N,)`,
/// probabilities clamped at `1e-7`.
pub fn alignment_loss(probs: &Tensor, classes: &Tensor) -> Result<Tensor> {
    let n = probs.dim(0)?;
    if classes.dims() != [n] {
        return Err(Error::Argument("one class index per pair expected".into()));
    }
    let idx = classes.to_dtype(DType::U32)?.unsqueeze(1)?;
    let p = probs.gather(&idx, 1)?.squeeze(1)?.clamp(PROB_CLAMP, 1.0)?;
    Ok(p.log()?.neg()?.mean_all()?)
}

/// Fraction of pairs whose argmax class matches.
pub fn pair_accuracy(probs: &Tensor, classes: &Tensor) -> Result<f64> {
    let p = probs.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let c = classes.to_dtype(DType::U32)?.to_vec1::<u32>()?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let hits = p
        .iter()
        .zip(&c)
        .filter(|(row, &k)| ((row[1] > row[0]) as u32) == k)
        .count();
    Ok(hits as f64 / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_positive_count_and_distinct_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_feature_pairs(&mut rng, 4, 64, 16, 100, 0.5).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.aligned()).count(), 50);
        assert!(pairs.iter().all(|p| p.t_body <= 48 && p.t_face <= 48));
        let all_pos = sample_feature_pairs(&mut rng, 4, 64, 16, 30, 1.0).unwrap();
        assert!(all_pos.iter().all(|p| p.aligned() && p.one_hot() == [1.0, 0.0]));
        assert!(sample_feature_pairs(&mut rng, 4, 16, 16, 3, 0.5).is_err());
    }

    #[test]
    fn ce_values() {
        let classes = Tensor::new(&[0u32, 1], &Device::Cpu).unwrap();
        let perfect = Tensor::new(&[[1.0f64, 0.0], [0.0, 1.0]], &Device::Cpu).unwrap();
        assert!(crate::nn::ops::scalar(&alignment_loss(&perfect, &classes).unwrap()).unwrap().abs() < 1e-12);
        let half = Tensor::new(&[[0.5f64, 0.5], [0.5, 0.5]], &Device::Cpu).unwrap();
        let v = crate::nn::ops::scalar(&alignment_loss(&half, &classes).unwrap()).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn classifier_outputs_distributions() {
        let mut s = ParamStore::new(1, DType::F32);
        let c = AlignmentClassifier::new(&mut s, "align", 4, 6).unwrap();
        let x = Tensor::ones((3, 5, 8), DType::F32, &Device::Cpu).unwrap();
        let p = c.forward(&x).unwrap().to_vec2::<f32>().unwrap();
        for row in p {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
    }
}
