//! Two-tower pose/audio synchronization network and the pose-sync distance.

use std::path::Path;

use candle_core::{DType, Tensor, D};
use ndarray::{s, Array2, ArrayView2, ArrayView3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PoseNormalizer;
use crate::error::{Error, Result};
use crate::nn::ops::{leaky_relu, scalar, stack_matrices, stack_sequences};
use crate::nn::{Adam, AdamConfig, Checkpoint, Linear, ParamStore};
use crate::training::FeatureStats;

pub const SYNCNET_KIND: &str = "pose-syncnet";

/// Pose frames per clip; at 15 fps this spans 0.6 s of audio.
pub const SYNC_CLIP_FRAMES: usize = 9;

/// Guard inside the embedding distance so its gradient stays finite at 0.
const DIST_EPS: f64 = 1e-12;

/// Anything that embeds pose clips and audio clips into one space.
pub trait SyncEmbedder {
    fn clip_frames(&self) -> usize {
        SYNC_CLIP_FRAMES
    }

    /// Embeds paired pose clips `(L, J, 2)` and mel clips `(L, M)`; returns
    /// one row per clip for each tower.
    fn embed(&self, pose: &[ArrayView3<'_, f32>], mel: &[ArrayView2<'_, f32>]) -> Result<(Array2<f64>, Array2<f64>)>;
}

fn row_distances(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Mean embedding distance over the `floor(T / L)` non-overlapping clips of
/// a sequence; the remainder is dropped.
pub fn psd(pose: ArrayView3<'_, f32>, mel: ArrayView2<'_, f32>, net: &dyn SyncEmbedder) -> Result<f64> {
    let l = net.clip_frames();
    let t = pose.dim().0;
    if mel.nrows() != t {
        return Err(Error::Argument(format!("pose has {t} frames but audio features have {}", mel.nrows())));
    }
    if t < l {
        return Err(Error::Argument(format!("pose-sync distance needs at least {l} frames, got {t}")));
    }
    let n = t / l;
    let poses: Vec<_> = (0..n).map(|i| pose.slice(s![i * l..(i + 1) * l, .., ..])).collect();
    let mels: Vec<_> = (0..n).map(|i| mel.slice(s![i * l..(i + 1) * l, ..])).collect();
    let (fp, fa) = net.embed(&poses, &mels)?;
    Ok(row_distances(&fp, &fa).iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncNetConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub margin: f64,
    /// Minimum offset, in frames, of a negative pair.
    pub min_shift: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub pairs_per_sequence: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SyncNetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 128,
            margin: 1.0,
            min_shift: 5,
            epochs: 60,
            batch_size: 64,
            pairs_per_sequence: 4,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl SyncNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.pairs_per_sequence == 0 {
            return Err(Error::Config("sync network sizes must be positive".into()));
        }
        if !(self.margin > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("sync network `margin` and `learning_rate` must be positive".into()));
        }
        if self.min_shift == 0 {
            return Err(Error::Config("`min_shift` must be at least one frame".into()));
        }
        Ok(())
    }
}

/// `y d² + (1 − y) max(0, m − d)²` averaged over pairs; `y = 1` for aligned.
pub fn contrastive_loss(fp: &Tensor, fa: &Tensor, aligned: &Tensor, margin: f64) -> Result<Tensor> {
    let d2 = (fp - fa)?.sqr()?.sum(D::Minus1)?;
    let d = d2.affine(1.0, DIST_EPS)?.sqrt()?;
    let hinge = (margin - d)?.relu()?.sqr()?;
    let y = aligned.to_dtype(fp.dtype())?;
    let neg = (1.0 - &y)?;
    Ok(((&y * &d2)? + (neg * hinge)?)?.mean_all()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SyncHeader {
    config: SyncNetConfig,
    points: usize,
    n_mels: usize,
    pose: PoseNormalizer,
    mel: FeatureStats,
}

/// Pose tower and audio tower, each a two-layer perceptron over a flattened clip.
#[derive(Debug)]
pub struct PoseSyncNet {
    store: ParamStore,
    pose1: Linear,
    pose2: Linear,
    audio1: Linear,
    audio2: Linear,
    header: SyncHeader,
}

/// One real recording: full-skeleton poses `T x J x 2` and mel `T x M`.
pub type SyncItem<'a> = (ArrayView3<'a, f32>, ArrayView2<'a, f32>);

impl PoseSyncNet {
    fn build(header: SyncHeader) -> Result<Self> {
        let cfg = &header.config;
        cfg.validate()?;
        let l = SYNC_CLIP_FRAMES;
        let mut store = ParamStore::new(cfg.seed, DType::F32);
        Ok(Self {
            pose1: Linear::new(&mut store, "sync.pose1", l * header.points * 2, cfg.hidden)?,
            pose2: Linear::new(&mut store, "sync.pose2", cfg.hidden, cfg.embed_dim)?,
            audio1: Linear::new(&mut store, "sync.audio1", l * header.n_mels, cfg.hidden)?,
            audio2: Linear::new(&mut store, "sync.audio2", cfg.hidden, cfg.embed_dim)?,
            store,
            header,
        })
    }

    pub fn config(&self) -> &SyncNetConfig {
        &self.header.config
    }

    fn tensors(&self, pose: &[ArrayView3<'_, f32>], mel: &[ArrayView2<'_, f32>]) -> Result<(Tensor, Tensor)> {
        if pose.len() != mel.len() || pose.is_empty() {
            return Err(Error::Argument("one audio clip per pose clip expected".into()));
        }
        let l = SYNC_CLIP_FRAMES;
        let mut p = Vec::with_capacity(pose.len());
        let mut m = Vec::with_capacity(mel.len());
        for (pc, mc) in pose.iter().zip(mel) {
            if pc.dim() != (l, self.header.points, 2) || mc.dim() != (l, self.header.n_mels) {
                return Err(Error::Argument(format!(
                    "sync clips must be {l} x {} x 2 poses and {l} x {} mel frames",
                    self.header.points, self.header.n_mels
                )));
            }
            p.push(self.header.pose.normalize(*pc)?);
            m.push(self.header.mel.apply(*mc)?);
        }
        let n = pose.len();
        let p = stack_sequences(&p.iter().map(|a| a.view()).collect::<Vec<_>>(), DType::F32)?.reshape((n, ()))?;
        let m = stack_matrices(&m.iter().map(|a| a.view()).collect::<Vec<_>>(), DType::F32)?.reshape((n, ()))?;
        Ok((p, m))
    }

    fn towers(&self, p: &Tensor, m: &Tensor) -> Result<(Tensor, Tensor)> {
        let fp = self.pose2.forward(&leaky_relu(&self.pose1.forward(p)?)?)?;
        let fa = self.audio2.forward(&leaky_relu(&self.audio1.forward(m)?)?)?;
        Ok((fp, fa))
    }

    /// Trains on real recordings; returns the per-epoch mean loss.
    pub fn train(items: &[SyncItem<'_>], cfg: &SyncNetConfig) -> Result<(Self, Vec<f64>)> {
        cfg.validate()?;
        let l = SYNC_CLIP_FRAMES;
        let Some((p0, m0)) = items.first() else {
            return Err(Error::Argument("no recordings to train the sync network".into()));
        };
        for (p, m) in items {
            if p.dim().0 != m.nrows() {
                return Err(Error::Argument("pose and audio features differ in length".into()));
            }
            // A negative needs an offset of min_shift with both clips inside.
            if p.dim().0 < l + cfg.min_shift {
                return Err(Error::Argument(format!(
                    "sequence of {} frames is too short for {l}-frame clips shifted by {}",
                    p.dim().0,
                    cfg.min_shift
                )));
            }
        }
        let header = SyncHeader {
            config: cfg.clone(),
            points: p0.dim().1,
            n_mels: m0.ncols(),
            pose: PoseNormalizer::fit(items.iter().map(|(p, _)| *p))?,
            mel: FeatureStats::fit(items.iter().map(|(_, m)| *m))?,
        };
        let net = Self::build(header)?;
        let mut opt = Adam::new(
            AdamConfig {
                lr: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &["sync."],
        );
        let mut log = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            // (item, pose start, audio start)
            let mut pairs = Vec::with_capacity(items.len() * cfg.pairs_per_sequence);
            for (i, (p, _)) in items.iter().enumerate() {
                let max_start = p.dim().0 - l;
                for k in 0..cfg.pairs_per_sequence {
                    let sp = rng.random_range(0..=max_start);
                    let sa = if k % 2 == 0 {
                        sp
                    } else {
                        loop {
                            let s = rng.random_range(0..=max_start);
                            if s.abs_diff(sp) >= cfg.min_shift {
                                break s;
                            }
                        }
                    };
                    pairs.push((i, sp, sa));
                }
            }
            use rand::seq::SliceRandom;
            pairs.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in pairs.chunks(cfg.batch_size) {
                let pc: Vec<_> = chunk.iter().map(|&(i, sp, _)| items[i].0.slice(s![sp..sp + l, .., ..])).collect();
                let mc: Vec<_> = chunk.iter().map(|&(i, _, sa)| items[i].1.slice(s![sa..sa + l, ..])).collect();
                let y: Vec<f32> = chunk.iter().map(|&(_, sp, sa)| (sp == sa) as u8 as f32).collect();
                let (p, m) = net.tensors(&pc, &mc)?;
                let (fp, fa) = net.towers(&p, &m)?;
                let y = Tensor::from_vec(y, chunk.len(), fp.device())?;
                let loss = contrastive_loss(&fp, &fa, &y, cfg.margin)?;
                let v = scalar(&loss)?;
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        component: "sync contrastive".into(),
                    });
                }
                total += v * chunk.len() as f64;
                opt.step(&net.store, &loss.backward()?)?;
            }
            log.push(total / pairs.len() as f64);
            log::debug!("syncnet epoch {epoch}: {:.5}", total / pairs.len() as f64);
        }
        Ok((net, log))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = serde_json::json!({ "syncnet": self.header });
        Ok(Checkpoint::new(SYNCNET_KIND, header, self.store.export()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        ckpt.expect_kind(SYNCNET_KIND, path)?;
        let net = Self::build(ckpt.field("syncnet", path)?)?;
        net.store.import(&ckpt.tensors, &path.display().to_string())?;
        Ok(net)
    }
}

impl SyncEmbedder for PoseSyncNet {
    fn embed(&self, pose: &[ArrayView3<'_, f32>], mel: &[ArrayView2<'_, f32>]) -> Result<(Array2<f64>, Array2<f64>)> {
        let (p, m) = self.tensors(pose, mel)?;
        let (fp, fa) = self.towers(&p, &m)?;
        let to_array = |t: &Tensor| -> Result<Array2<f64>> {
            let rows = t.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            let (n, e) = (rows.len(), rows.first().map_or(0, Vec::len));
            Ok(Array2::from_shape_vec((n, e), rows.into_iter().flatten().collect()).expect("rectangular"))
        };
        Ok((to_array(&fp)?, to_array(&fa)?))
    }
}

/// Mean embedding distance of aligned clips and of clips whose audio is
/// offset by `shift` frames (backwards when forwards would leave the sequence).
pub fn pair_separation(net: &dyn SyncEmbedder, items: &[SyncItem<'_>], shift: usize) -> Result<(f64, f64)> {
    let l = net.clip_frames();
    let (mut aligned, mut shifted, mut n) = (0.0, 0.0, 0usize);
    for (p, m) in items {
        let t = p.dim().0;
        if t < l + shift {
            return Err(Error::Argument(format!("sequence of {t} frames cannot hold a clip shifted by {shift}")));
        }
        let starts: Vec<usize> = (0..=t - l).step_by(l).collect();
        let pc: Vec<_> = starts.iter().map(|&s0| p.slice(s![s0..s0 + l, .., ..])).collect();
        let mc: Vec<_> = starts.iter().map(|&s0| m.slice(s![s0..s0 + l, ..])).collect();
        let other: Vec<usize> = starts
            .iter()
            .map(|&s0| if s0 + shift + l <= t { s0 + shift } else { s0 - shift })
            .collect();
        let ms: Vec<_> = other.iter().map(|&s0| m.slice(s![s0..s0 + l, ..])).collect();
        let (fp, fa) = net.embed(&pc, &mc)?;
        let (_, fs) = net.embed(&pc, &ms)?;
        aligned += row_distances(&fp, &fa).iter().sum::<f64>();
        shifted += row_distances(&fp, &fs).iter().sum::<f64>();
        n += starts.len();
    }
    if n == 0 {
        return Err(Error::Argument("no clips to compare".into()));
    }
    Ok((aligned / n as f64, shifted / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// Embeds every pose clip at `p` and every audio clip at `a`.
    struct Stub {
        p: Vec<f64>,
        a: Vec<f64>,
    }

    impl SyncEmbedder for Stub {
        fn embed(&self, pose: &[ArrayView3<'_, f32>], _mel: &[ArrayView2<'_, f32>]) -> Result<(Array2<f64>, Array2<f64>)> {
            let n = pose.len();
            let rows = |v: &Vec<f64>| Array2::from_shape_fn((n, v.len()), |(_, k)| v[k]);
            Ok((rows(&self.p), rows(&self.a)))
        }
    }

    #[test]
    fn stub_distances() {
        let pose = Array3::<f32>::zeros((64, 3, 2));
        let mel = Array2::<f32>::zeros((64, 4));
        let same = Stub { p: vec![0.3, 0.1], a: vec![0.3, 0.1] };
        assert_eq!(psd(pose.view(), mel.view(), &same).unwrap(), 0.0);
        let unit = Stub { p: vec![1.0, 0.0], a: vec![0.0, 0.0] };
        assert_eq!(psd(pose.view(), mel.view(), &unit).unwrap(), 1.0);
        let short = Array3::<f32>::zeros((8, 3, 2));
        assert!(psd(short.view(), Array2::zeros((8, 4)).view(), &unit).is_err());
    }

    #[test]
    fn contrastive_cases() {
        let dev = candle_core::Device::Cpu;
        let fp = Tensor::new(&[[0.0f64, 0.0], [0.0, 0.0]], &dev).unwrap();
        let fa = Tensor::new(&[[0.3f64, 0.4], [0.3, 0.4]], &dev).unwrap();
        let y = Tensor::new(&[1.0f64, 0.0], &dev).unwrap();
        // aligned: 0.25; negative: (1 - 0.5)^2 = 0.25
        let v = scalar(&contrastive_loss(&fp, &fa, &y, 1.0).unwrap()).unwrap();
        assert!((v - 0.25).abs() < 1e-9);
    }
}
