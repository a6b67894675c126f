//! Brute-force reference implementations and numeric helpers shared by the
//! integration tests. Everything here works on plain `f64` values.

#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use gesture_core::eval::SyncEmbedder;
use ndarray::{Array2, ArrayView2, ArrayView3};
use rand::Rng;

pub const PROB_CLAMP: f64 = 1e-7;

/// Nested `B x T x J x C` values.
pub type Seq4 = Vec<Vec<Vec<Vec<f64>>>>;

pub fn tensor(values: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(values.to_vec(), shape, &Device::Cpu).unwrap()
}

pub fn value(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn flatten4(x: &Seq4) -> Vec<f64> {
    x.iter().flatten().flatten().flatten().copied().collect()
}

pub fn random_seq4<R: Rng>(rng: &mut R, b: usize, t: usize, j: usize, c: usize, scale: f64) -> Seq4 {
    (0..b)
        .map(|_| {
            (0..t)
                .map(|_| (0..j).map(|_| (0..c).map(|_| rng.random_range(-scale..scale)).collect()).collect())
                .collect()
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `mean_b Σ_t w_bt (1 − ⟨a, b⟩ / max(‖a‖‖b‖, ε))` over `B x T x D` latents.
pub fn consistency(zp: &[Vec<Vec<f64>>], za: &[Vec<Vec<f64>>], w: Option<&[Vec<f64>]>, eps: f64) -> f64 {
    let mut total = 0.0;
    for b in 0..zp.len() {
        for t in 0..zp[b].len() {
            let (p, a) = (&zp[b][t], &za[b][t]);
            let dot: f64 = p.iter().zip(a).map(|(x, y)| x * y).sum();
            let np = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let weight = w.map_or(1.0, |w| w[b][t]);
            total += weight * (1.0 - dot / (np * na).max(eps));
        }
    }
    total / zp.len() as f64
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce(scores: &[f64], labels: &[f64]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum::<f64>()
        / n
}

pub fn huber_scalar(d: f64, delta: f64) -> f64 {
    if d.abs() <= delta {
        0.5 * d * d
    } else {
        delta * (d.abs() - 0.5 * delta)
    }
}

fn frame_huber(pred: &[Vec<f64>], truth: &[Vec<f64>], delta: f64) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (pj, tj) in pred.iter().zip(truth) {
        for (p, t) in pj.iter().zip(tj) {
            s += huber_scalar(p - t, delta);
            n += 1;
        }
    }
    s / n as f64
}

/// Per-part Huber: per frame the mean over coordinates, then
/// `(1/2T)(Σ_t body + Σ_t face)`, averaged over the batch. Without a face
/// part the body frames are averaged.
pub fn huber_part(pb: &Seq4, b: &Seq4, face: Option<(&Seq4, &Seq4)>, delta: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..pb.len() {
        let t = pb[i].len() as f64;
        let hb: f64 = (0..pb[i].len()).map(|k| frame_huber(&pb[i][k], &b[i][k], delta)).sum();
        total += match face {
            Some((pf, f)) => {
                let hf: f64 = (0..pf[i].len()).map(|k| frame_huber(&pf[i][k], &f[i][k], delta)).sum();
                (hb + hf) / (2.0 * t)
            }
            None => hb / t,
        };
    }
    total / pb.len() as f64
}

/// L1 summed over keypoints and coordinates, averaged over frames and batch.
pub fn l1_recon(pred: &Seq4, truth: &Seq4) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let mut seq = 0.0;
        for k in 0..pred[i].len() {
            for (pj, tj) in pred[i][k].iter().zip(&truth[i][k]) {
                for (p, t) in pj.iter().zip(tj) {
                    seq += (p - t).abs();
                }
            }
        }
        total += seq / pred[i].len() as f64;
    }
    total / pred.len() as f64
}

pub fn weighted_total(values: &[f64; 5], lambdas: &[f64; 5]) -> f64 {
    values.iter().zip(lambdas).map(|(v, l)| v * l).sum()
}

pub fn topk_mean(scores: &[f64], k: usize) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s[..k].iter().sum::<f64>() / k as f64
}

/// Embeds clips with fixed random linear maps; used as a stand-in network.
pub struct LinearEmbedder {
    pub pose_w: Array2<f64>,
    pub mel_w: Array2<f64>,
    pub clip: usize,
}

impl LinearEmbedder {
    pub fn random<R: Rng>(rng: &mut R, clip: usize, points: usize, mels: usize, dim: usize) -> Self {
        let mut m = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        Self {
            pose_w: m(dim, clip * points * 2),
            mel_w: m(dim, clip * mels),
            clip,
        }
    }

    fn apply(w: &Array2<f64>, x: impl Iterator<Item = f32>) -> Vec<f64> {
        let x: Vec<f64> = x.map(f64::from).collect();
        w.outer_iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn embed_pose(&self, clip: ArrayView3<'_, f32>) -> Vec<f64> {
        Self::apply(&self.pose_w, clip.iter().copied())
    }

    pub fn embed_mel(&self, clip: ArrayView2<'_, f32>) -> Vec<f64> {
        Self::apply(&self.mel_w, clip.iter().copied())
    }
}

impl SyncEmbedder for LinearEmbedder {
    fn clip_frames(&self) -> usize {
        self.clip
    }

    fn embed(
        &self,
        pose: &[ArrayView3<'_, f32>],
        mel: &[ArrayView2<'_, f32>],
    ) -> gesture_core::Result<(Array2<f64>, Array2<f64>)> {
        let d = self.pose_w.nrows();
        let mut fp = Array2::zeros((pose.len(), d));
        let mut fa = Array2::zeros((mel.len(), d));
        for (i, (p, m)) in pose.iter().zip(mel).enumerate() {
            for (k, v) in self.embed_pose(*p).into_iter().enumerate() {
                fp[[i, k]] = v;
            }
            for (k, v) in self.embed_mel(*m).into_iter().enumerate() {
                fa[[i, k]] = v;
            }
        }
        Ok((fp, fa))
    }
}

/// Pose-sync distance by explicit clip loop.
pub fn psd_reference(pose: ArrayView3<'_, f32>, mel: ArrayView2<'_, f32>, net: &LinearEmbedder) -> f64 {
    let l = net.clip;
    let n = pose.dim().0 / l;
    let mut total = 0.0;
    for i in 0..n {
        let p = net.embed_pose(pose.slice(ndarray::s![i * l..(i + 1) * l, .., ..]));
        let a = net.embed_mel(mel.slice(ndarray::s![i * l..(i + 1) * l, ..]));
        total += p.iter().zip(&a).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    total / n as f64
}

/// Relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between the autograd gradient of
/// `f` at `x0` and central differences with step `h`.
pub fn gradient_error<F>(f: F, x0: &[f64], shape: &[usize], h: f64) -> f64
where
    F: Fn(&Tensor) -> Tensor,
{
    let var = Var::from_tensor(&tensor(x0, shape)).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = grads
        .get(var.as_tensor())
        .expect("input receives a gradient")
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let mut numeric = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let up = value(&f(&tensor(&x, shape)));
        x[i] = x0[i] - h;
        let down = value(&f(&tensor(&x, shape)));
        x[i] = x0[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / na.max(nn)
    }
}

/// `n` rows of `N(mean, I)` drawn in antithetic pairs `mean ± z`, so the
/// sample mean equals `mean` exactly.
pub fn antithetic_gaussian<R: Rng>(rng: &mut R, n: usize, mean: &[f64]) -> Array2<f64> {
    assert!(n % 2 == 0, "antithetic sampling needs an even count");
    let d = mean.len();
    let mut x = Array2::zeros((n, d));
    for i in (0..n).step_by(2) {
        for k in 0..d {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            x[[i, k]] = mean[k] + z;
            x[[i + 1, k]] = mean[k] - z;
        }
    }
    x
}
