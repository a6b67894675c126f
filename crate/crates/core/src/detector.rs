//! Weakly-supervised salient posture detector.
//!
//! Frame features from a temporal convolution stack are mixed by a temporal
//! relation module (a learned frame-affinity softmax alongside a fixed
//! index-distance softmax), scored per frame, and pooled over the top-k
//! frames so sequence-level labels alone can supervise it.

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{leaky_relu, scalar, sigmoid, softmax_last};
use crate::nn::{Adam, AdamConfig, ConvStack, Linear, ParamStore};

/// Probability clamp used by the cross-entropy losses.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Initial and interaction feature width D1.
    pub d1: usize,
    /// Hidden width D2 of the interaction transform.
    pub d2: usize,
    pub top_k: usize,
    /// Width of the θ and φ projections.
    pub theta_phi_dim: usize,
    /// Channels of the convolutions before the final one (which outputs D1).
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            d1: 512,
            d2: 1024,
            top_k: 16,
            theta_phi_dim: 512,
            conv_channels: vec![256, 512],
            conv_kernel: 5,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.theta_phi_dim == 0 {
            return Err(Error::Config("detector dims must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("detector `top_k` must be at least 1".into()));
        }
        if self.conv_kernel % 2 == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Config("detector convolutions need an odd kernel and positive widths".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("detector `batch_size` must be at least 1".into()));
        }
        Ok(())
    }

    /// `k` clamped to the sequence length, with a warning when clamping.
    pub fn effective_k(&self, frames: usize) -> usize {
        if self.top_k > frames {
            log::warn!("top-k of {} exceeds {frames} frames; using k = {frames}", self.top_k);
            frames
        } else {
            self.top_k
        }
    }
}

/// Row-softmax of the frame affinity `⟨θ_s, φ_t⟩`; inputs `(…, T, d)`.
pub fn bilinear_affinity(theta_x: &Tensor, phi_x: &Tensor) -> Result<Tensor> {
    let logits = theta_x.matmul(&phi_x.transpose(D::Minus2, D::Minus1)?.contiguous()?)?;
    softmax_last(&logits)
}

/// Row-softmax of `I_{t,s} = −|t − s|`, a pure function of `T`.
pub fn index_prior_weights(frames: usize, dtype: DType) -> Result<Tensor> {
    if frames == 0 {
        return Err(Error::Argument("index prior needs at least one frame".into()));
    }
    let mut w = vec![0.0f64; frames * frames];
    for t in 0..frames {
        let row = &mut w[t * frames..(t + 1) * frames];
        for (s, v) in row.iter_mut().enumerate() {
            *v = (-(t.abs_diff(s) as f64)).exp();
        }
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(Tensor::from_vec(w, (frames, frames), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Mean of the `k` largest scores along the last axis. Selection happens on
/// detached values; gradients flow to the selected scores.
pub fn topk_pool(scores: &Tensor, k: usize) -> Result<Tensor> {
    let t = scores.dim(D::Minus1)?;
    if k == 0 || k > t {
        return Err(Error::Argument(format!("top-k needs 1 ≤ k ≤ T, got k = {k}, T = {t}")));
    }
    let order = scores.detach().arg_sort_last_dim(false)?;
    let top = order.narrow(D::Minus1, 0, k)?.contiguous()?;
    Ok(scores.gather(&top, D::Minus1)?.mean(D::Minus1)?)
}

/// Mean binary cross-entropy with scores clamped to `[1e-7, 1 − 1e-7]`.
pub fn detector_loss(sequence_scores: &Tensor, labels: &Tensor) -> Result<Tensor> {
    if sequence_scores.dims() != labels.dims() {
        return Err(Error::Argument("scores and labels differ in shape".into()));
    }
    let s = sequence_scores.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let y = labels.to_dtype(s.dtype())?;
    let pos = (&y * s.log()?)?;
    let neg = ((1.0 - &y)? * (1.0 - &s)?.log()?)?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

#[derive(Debug, Clone)]
pub struct SalientPostureDetector {
    conv: ConvStack,
    theta: Linear,
    phi: Linear,
    fc_hidden: Linear,
    fc_out: Linear,
    classifier: Linear,
    cfg: DetectorConfig,
    points: usize,
}

impl SalientPostureDetector {
    pub fn new(store: &mut ParamStore, cfg: &DetectorConfig, body_points: usize) -> Result<Self> {
        cfg.validate()?;
        let mut channels = cfg.conv_channels.clone();
        channels.push(cfg.d1);
        Ok(Self {
            conv: ConvStack::new(store, "det.conv", 2 * body_points, &channels, cfg.conv_kernel)?,
            theta: Linear::new(store, "det.theta", cfg.d1, cfg.theta_phi_dim)?,
            phi: Linear::new(store, "det.phi", cfg.d1, cfg.theta_phi_dim)?,
            fc_hidden: Linear::new(store, "det.fc_hidden", 2 * cfg.d1, cfg.d2)?,
            fc_out: Linear::new(store, "det.fc_out", cfg.d2, cfg.d1)?,
            classifier: Linear::new(store, "det.classifier", cfg.d1, 1)?,
            cfg: cfg.clone(),
            points: body_points,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Normalized body poses `(B, T, J_b, 2)` to `X (B, T, D1)`.
    pub fn extract_initial_features(&self, pose: &Tensor) -> Result<Tensor> {
        let (b, t, j, c) = pose.dims4()?;
        if j != self.points || c != 2 {
            return Err(Error::Argument(format!(
                "detector expects {} x 2 keypoints, got {j} x {c}",
                self.points
            )));
        }
        let x = pose.reshape((b, t, 2 * j))?.transpose(1, 2)?.contiguous()?;
        Ok(self.conv.forward(&x)?.transpose(1, 2)?.contiguous()?)
    }

    /// `W1 (B, T, T)`.
    pub fn affinity_weights(&self, x: &Tensor) -> Result<Tensor> {
        bilinear_affinity(&self.theta.forward(x)?, &self.phi.forward(x)?)
    }

    /// `Y = FC_out(act(FC_hidden([W1 X ⊕ W2 X])))`, `(B, T, D1)`.
    pub fn temporal_relation(&self, x: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        if w1.dims() != [b, t, t] || w2.dims() != [t, t] {
            return Err(Error::Argument(format!(
                "relation weights {:?} / {:?} do not match {t} frames",
                w1.dims(),
                w2.dims()
            )));
        }
        let a = w1.matmul(x)?;
        let p = w2.broadcast_matmul(x)?;
        let h = leaky_relu(&self.fc_hidden.forward(&Tensor::cat(&[&a, &p], D::Minus1)?)?)?;
        self.fc_out.forward(&h)
    }

    /// `S^b (B, T)` in (0, 1).
    pub fn frame_scores(&self, y: &Tensor) -> Result<Tensor> {
        sigmoid(&self.classifier.forward(y)?.squeeze(D::Minus1)?)
    }

    /// Pre-sigmoid frame scores `(B, T)` for a batch of normalized body poses.
    /// Same order as [`Self::forward`] but free of saturation ties.
    pub fn logits(&self, pose: &Tensor) -> Result<Tensor> {
        let x = self.extract_initial_features(pose)?;
        let w1 = self.affinity_weights(&x)?;
        let w2 = index_prior_weights(x.dim(1)?, x.dtype())?;
        let y = self.temporal_relation(&x, &w1, &w2)?;
        Ok(self.classifier.forward(&y)?.squeeze(D::Minus1)?)
    }

    /// Frame scores for a batch of normalized body poses.
    pub fn forward(&self, pose: &Tensor) -> Result<Tensor> {
        sigmoid(&self.logits(pose)?)
    }
}

/// Per-epoch record of detector training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains on normalized body poses `(N, T, J_b, 2)` with 0/1 sequence labels.
pub fn train_detector(
    store: &ParamStore,
    detector: &SalientPostureDetector,
    poses: &Tensor,
    labels: &[u8],
) -> Result<Vec<DetectorEpoch>> {
    let cfg = detector.config();
    let (n, t, _, _) = poses.dims4()?;
    if n != labels.len() || n == 0 {
        return Err(Error::Argument(format!("{n} sequences but {} labels", labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == n {
        log::warn!("detector labels are single-class ({positives} of {n} positive); AUROC is undefined");
    }
    let k = cfg.effective_k(t);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &["det."],
    );
    let y_all = Tensor::from_vec(labels.iter().map(|&l| l as f32).collect::<Vec<_>>(), n, poses.device())?
        .to_dtype(poses.dtype())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let idx = Tensor::from_slice(chunk, chunk.len(), poses.device())?;
            let x = poses.index_select(&idx, 0)?;
            let y = y_all.index_select(&idx, 0)?;
            let s = topk_pool(&detector.forward(&x)?, k)?;
            let loss = detector_loss(&s, &y)?;
            let v = scalar(&loss)?;
            if !v.is_finite() {
                return Err(Error::Divergence {
                    component: "detector BCE".into(),
                });
            }
            total += v * chunk.len() as f64;
            opt.step(store, &loss.backward()?)?;
        }
        let loss = total / n as f64;
        log::debug!("detector epoch {epoch}: loss {loss:.5}");
        log.push(DetectorEpoch { epoch, loss });
    }
    Ok(log)
}

/// Frame scores for many sequences, batched to bound memory.
pub fn score_sequences(detector: &SalientPostureDetector, poses: &Tensor, batch: usize) -> Result<Vec<Vec<f32>>> {
    batched(poses, batch, |x| detector.forward(x))
}

/// Frame logits per sequence, batched like [`score_sequences`].
pub fn logit_sequences(detector: &SalientPostureDetector, poses: &Tensor, batch: usize) -> Result<Vec<Vec<f32>>> {
    batched(poses, batch, |x| detector.logits(x))
}

fn batched(poses: &Tensor, batch: usize, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Vec<Vec<f32>>> {
    let n = poses.dim(0)?;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = batch.max(1).min(n - start);
        let s = f(&poses.narrow(0, start, len)?)?.detach();
        out.extend(s.to_dtype(DType::F32)?.to_vec2::<f32>()?);
        start += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        t.to_dtype(DType::F64).unwrap().to_vec2::<f64>().unwrap()
    }

    #[test]
    fn index_prior_known_row() {
        let w = rows(&index_prior_weights(3, DType::F64).unwrap());
        let e = [0.6652, 0.2447, 0.0900];
        for (a, b) in w[0].iter().zip(e) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(rows(&index_prior_weights(1, DType::F64).unwrap()), vec![vec![1.0]]);
    }

    #[test]
    fn topk_examples() {
        let s = Tensor::new(&[0.9f64, 0.1, 0.8, 0.2], &Device::Cpu).unwrap();
        assert!((scalar(&topk_pool(&s, 2).unwrap()).unwrap() - 0.85).abs() < 1e-12);
        assert!((scalar(&topk_pool(&s, 4).unwrap()).unwrap() - 0.5).abs() < 1e-12);
        assert!(topk_pool(&s, 5).is_err());
    }

    #[test]
    fn bce_examples() {
        let half = Tensor::new(&[0.5f64, 0.5], &Device::Cpu).unwrap();
        let y = Tensor::new(&[0.0f64, 1.0], &Device::Cpu).unwrap();
        assert!((scalar(&detector_loss(&half, &y).unwrap()).unwrap() - 2f64.ln()).abs() < 1e-12);
        let s = Tensor::new(&[0.9f64], &Device::Cpu).unwrap();
        let one = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        assert!((scalar(&detector_loss(&s, &one).unwrap()).unwrap() + 0.9f64.ln()).abs() < 1e-12);
        let sure = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        let zero = Tensor::new(&[0.0f64], &Device::Cpu).unwrap();
        assert!(scalar(&detector_loss(&sure, &zero).unwrap()).unwrap().is_finite());
    }

    #[test]
    fn orthonormal_identity_affinity() {
        let t = 4;
        let x = Tensor::eye(t, DType::F64, &Device::Cpu).unwrap();
        let w = rows(&bilinear_affinity(&x, &x).unwrap());
        let e = std::f64::consts::E;
        for (i, row) in w.iter().enumerate() {
            assert!((row[i] - e / (e + (t as f64 - 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn detector_shapes_and_range() {
        let cfg = DetectorConfig {
            d1: 8,
            d2: 12,
            theta_phi_dim: 4,
            conv_channels: vec![6, 6],
            top_k: 3,
            ..Default::default()
        };
        let mut s = ParamStore::new(0, DType::F32);
        let det = SalientPostureDetector::new(&mut s, &cfg, 5).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 10, 5, 2), &Device::Cpu).unwrap();
        let scores = det.forward(&x).unwrap();
        assert_eq!(scores.dims(), &[2, 10]);
        let v = scores.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(det.extract_initial_features(&x).unwrap().dims(), &[2, 10, 8]);
    }
}
