//! Body synthesis branch: a recurrent pose encoder (reconstruction path), a
//! convolutional audio encoder feeding a 1-D UNet (generation path), and one
//! pose decoder applied to both latent tracks.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvStack, Gru, Linear, ParamStore, UNet1d};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyBranchConfig {
    /// Joint embedding dimension D.
    pub latent_dim: usize,
    pub pose_encoder_layers: usize,
    /// Output channels of each audio convolution.
    pub audio_channels: Vec<usize>,
    pub audio_kernel: usize,
    pub unet_width: usize,
    pub unet_levels: usize,
    pub decoder_hidden: usize,
    /// Guard on the product of norms in the consistency loss.
    pub epsilon: f64,
}

impl Default for BodyBranchConfig {
    fn default() -> Self {
        Self {
            latent_dim: 512,
            pose_encoder_layers: 2,
            audio_channels: vec![64, 128, 256, 256],
            audio_kernel: 3,
            unet_width: 256,
            unet_levels: 3,
            decoder_hidden: 1024,
            epsilon: 1e-8,
        }
    }
}

impl BodyBranchConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("latent_dim", self.latent_dim),
            ("pose_encoder_layers", self.pose_encoder_layers),
            ("unet_width", self.unet_width),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("body branch `{name}` must be positive")));
        }
        if self.audio_channels.is_empty() || self.audio_channels.contains(&0) {
            return Err(Error::Config("body branch `audio_channels` must be non-empty and positive".into()));
        }
        if self.audio_kernel % 2 == 0 {
            return Err(Error::Config("body branch `audio_kernel` must be odd".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("body branch `epsilon` must be positive".into()));
        }
        Ok(())
    }
}

/// Rejects tensors holding NaN or infinity.
pub fn ensure_finite(x: &Tensor, what: &str) -> Result<()> {
    let m = crate::nn::ops::scalar(&x.abs()?.max_all()?.to_dtype(candle_core::DType::F64)?)?;
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} contains non-finite values")))
    }
}

/// Audio encoder: convolutions over mel, optional ASR concatenation, UNet to D.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    conv: ConvStack,
    unet: UNet1d,
    n_mels: usize,
    asr_dim: usize,
}

impl AudioEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BodyBranchConfig,
        n_mels: usize,
        asr_dim: usize,
    ) -> Result<Self> {
        let conv = ConvStack::new(store, &format!("{name}.conv"), n_mels, &cfg.audio_channels, cfg.audio_kernel)?;
        let conv_out = *cfg.audio_channels.last().expect("validated non-empty");
        let unet = UNet1d::new(
            store,
            &format!("{name}.unet"),
            conv_out + asr_dim,
            cfg.unet_width,
            cfg.latent_dim,
            cfg.unet_levels,
        )?;
        Ok(Self {
            conv,
            unet,
            n_mels,
            asr_dim,
        })
    }

    pub fn asr_dim(&self) -> usize {
        self.asr_dim
    }

    /// `mel (B, T, M)`, `asr (B, T, A)` to `(B, T, D)`. ASR features are used
    /// only when the encoder was built with a non-zero ASR width.
    pub fn forward(&self, mel: &Tensor, asr: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, m) = mel.dims3()?;
        if m != self.n_mels {
            return Err(Error::Argument(format!("audio encoder expects {} mel bins, got {m}", self.n_mels)));
        }
        let h = self.conv.forward(&mel.transpose(1, 2)?.contiguous()?)?;
        let h = match (self.asr_dim, asr) {
            (0, _) => h,
            (a, Some(f)) => {
                let (fb, ft, fa) = f.dims3()?;
                if (fb, ft) != (b, t) {
                    return Err(Error::Argument(format!(
                        "ASR track has {ft} frames for {fb} items, mel has {t} frames for {b}"
                    )));
                }
                if fa != a {
                    return Err(Error::Argument(format!("ASR track has {fa} features, expected {a}")));
                }
                Tensor::cat(&[&h, &f.transpose(1, 2)?.contiguous()?], 1)?
            }
            (a, None) => {
                return Err(Error::Argument(format!(
                    "model was built with a {a}-dim ASR track but none was supplied"
                )))
            }
        };
        Ok(self.unet.forward(&h)?.transpose(1, 2)?.contiguous()?)
    }
}

/// Recurrent decoder from latents to keypoints.
#[derive(Debug, Clone)]
pub struct PoseDecoder {
    gru: Gru,
    out: Linear,
    latent_dim: usize,
    points: usize,
}

impl PoseDecoder {
    pub fn new(store: &mut ParamStore, name: &str, latent_dim: usize, hidden: usize, points: usize) -> Result<Self> {
        Ok(Self {
            gru: Gru::new(store, &format!("{name}.gru"), latent_dim, hidden)?,
            out: Linear::new(store, &format!("{name}.out"), hidden, 2 * points)?,
            latent_dim,
            points,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// `(B, T, D)` to `(B, T, J, 2)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let (b, t, d) = z.dims3()?;
        if d != self.latent_dim {
            return Err(Error::Argument(format!("decoder expects latent dim {}, got {d}", self.latent_dim)));
        }
        Ok(self.out.forward(&self.gru.forward(z)?)?.reshape((b, t, self.points, 2))?)
    }
}

#[derive(Debug, Clone)]
pub struct BodyBranch {
    pose_encoder: Vec<Gru>,
    audio: AudioEncoder,
    decoder: PoseDecoder,
    cfg: BodyBranchConfig,
    points: usize,
}

impl BodyBranch {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BodyBranchConfig,
        body_points: usize,
        n_mels: usize,
        asr_dim: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut pose_encoder = Vec::with_capacity(cfg.pose_encoder_layers);
        let mut prev = 2 * body_points;
        for l in 0..cfg.pose_encoder_layers {
            pose_encoder.push(Gru::new(store, &format!("{name}.pose_enc.{l}"), prev, cfg.latent_dim)?);
            prev = cfg.latent_dim;
        }
        let audio = AudioEncoder::new(store, &format!("{name}.audio"), cfg, n_mels, asr_dim)?;
        let decoder = PoseDecoder::new(store, &format!("{name}.decoder"), cfg.latent_dim, cfg.decoder_hidden, body_points)?;
        Ok(Self {
            pose_encoder,
            audio,
            decoder,
            cfg: cfg.clone(),
            points: body_points,
        })
    }

    pub fn config(&self) -> &BodyBranchConfig {
        &self.cfg
    }

    /// Normalized body poses `(B, T, J_b, 2)` to `Z^b_p (B, T, D)`.
    pub fn encode_pose(&self, pose: &Tensor) -> Result<Tensor> {
        let (b, t, j, c) = pose.dims4()?;
        if j != self.points || c != 2 {
            return Err(Error::Argument(format!(
                "pose encoder expects {} x 2 keypoints per frame, got {j} x {c}",
                self.points
            )));
        }
        let mut h = pose.reshape((b, t, 2 * j))?;
        for gru in &self.pose_encoder {
            h = gru.forward(&h)?;
        }
        Ok(h)
    }

    /// Mel `(B, T, M)` and optional ASR `(B, T, A)` to `Z^b_a (B, T, D)`.
    pub fn encode_audio(&self, mel: &Tensor, asr: Option<&Tensor>) -> Result<Tensor> {
        self.audio.forward(mel, asr)
    }

    /// The single decoder shared by both paths.
    pub fn decoder(&self) -> &PoseDecoder {
        &self.decoder
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }
}

/// `Σ_t w_t (1 − ⟨a_t, b_t⟩ / max(‖a_t‖‖b_t‖, ε))` for latents `(T, D)`, or
/// the batch mean of that sum for `(B, T, D)`. Weights default to one.
///
/// The guard is evaluated as `sqrt(max(‖a‖²‖b‖², ε²))`, which has the same
/// value but keeps the gradient finite when a row is exactly zero.
pub fn consistency_loss(zp: &Tensor, za: &Tensor, saliency: Option<&Tensor>, epsilon: f64) -> Result<Tensor> {
    if zp.dims() != za.dims() {
        return Err(Error::Argument(format!(
            "latent shapes differ: {:?} vs {:?}",
            zp.dims(),
            za.dims()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Argument("epsilon must be positive".into()));
    }
    let batched = zp.rank() == 3;
    let (zp, za) = if batched {
        (zp.clone(), za.clone())
    } else if zp.rank() == 2 {
        (zp.unsqueeze(0)?, za.unsqueeze(0)?)
    } else {
        return Err(Error::Argument("latents must be (T, D) or (B, T, D)".into()));
    };
    let dot = (&zp * &za)?.sum(D::Minus1)?;
    let norms = (zp.sqr()?.sum(D::Minus1)? * za.sqr()?.sum(D::Minus1)?)?;
    let floor = Tensor::full(epsilon * epsilon, norms.shape(), norms.device())?.to_dtype(norms.dtype())?;
    let denom = norms.maximum(&floor)?.sqrt()?;
    let terms = (1.0 - dot.div(&denom)?)?;
    let terms = match saliency {
        None => terms,
        Some(w) => {
            let w = w.detach().to_dtype(terms.dtype())?;
            let w = if batched { w } else { w.unsqueeze(0)? };
            if w.dims() != terms.dims() {
                return Err(Error::Argument(format!(
                    "saliency has shape {:?}, latents need {:?}",
                    w.dims(),
                    terms.dims()
                )));
            }
            let min = crate::nn::ops::scalar(&w.min_all()?.to_dtype(candle_core::DType::F64)?)?;
            if min < 0.0 || !min.is_finite() {
                return Err(Error::Argument("saliency weights must be non-negative".into()));
            }
            (terms * w)?
        }
    };
    Ok(terms.sum(D::Minus1)?.mean(0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t2(rows: &[[f64; 2]]) -> Tensor {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (rows.len(), 2), &Device::Cpu).unwrap()
    }

    fn val(x: &Tensor) -> f64 {
        crate::nn::ops::scalar(x).unwrap()
    }

    #[test]
    fn consistency_known_values() {
        let a = t2(&[[1.0, 2.0], [-3.0, 0.5], [0.2, 0.1]]);
        assert!(val(&consistency_loss(&a, &a, None, 1e-8).unwrap()).abs() < 1e-12);
        assert!((val(&consistency_loss(&a, &a.neg().unwrap(), None, 1e-8).unwrap()) - 6.0).abs() < 1e-12);
        let b = t2(&[[-2.0, 1.0], [0.5, 3.0], [-0.1, 0.2]]);
        assert!((val(&consistency_loss(&a, &b, None, 1e-8).unwrap()) - 3.0).abs() < 1e-12);
        let zero_w = Tensor::zeros(3, DType::F64, &Device::Cpu).unwrap();
        assert_eq!(val(&consistency_loss(&a, &b, Some(&zero_w), 1e-8).unwrap()), 0.0);
    }

    #[test]
    fn zero_rows_are_guarded() {
        let z = Tensor::zeros((4, 3), DType::F64, &Device::Cpu).unwrap();
        let a = Tensor::ones((4, 3), DType::F64, &Device::Cpu).unwrap();
        let v = val(&consistency_loss(&z, &a, None, 1e-8).unwrap());
        assert_eq!(v, 4.0);
        let zv = candle_core::Var::from_tensor(&z).unwrap();
        let g = consistency_loss(zv.as_tensor(), &a, None, 1e-8).unwrap().backward().unwrap();
        let grad = g.get(zv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn negative_saliency_rejected() {
        let a = t2(&[[1.0, 0.0]]);
        let w = Tensor::new(&[-0.5f64], &Device::Cpu).unwrap();
        assert!(consistency_loss(&a, &a, Some(&w), 1e-8).is_err());
    }

    #[test]
    fn branch_shapes() {
        let cfg = BodyBranchConfig {
            latent_dim: 8,
            audio_channels: vec![4, 6],
            unet_width: 5,
            decoder_hidden: 7,
            ..Default::default()
        };
        let mut s = ParamStore::new(0, DType::F32);
        let branch = BodyBranch::new(&mut s, "body", &cfg, 3, 10, 2).unwrap();
        let pose = Tensor::zeros((2, 9, 3, 2), DType::F32, &Device::Cpu).unwrap();
        let mel = Tensor::zeros((2, 9, 10), DType::F32, &Device::Cpu).unwrap();
        let asr = Tensor::zeros((2, 9, 2), DType::F32, &Device::Cpu).unwrap();
        let zp = branch.encode_pose(&pose).unwrap();
        assert_eq!(zp.dims(), &[2, 9, 8]);
        let za = branch.encode_audio(&mel, Some(&asr)).unwrap();
        assert_eq!(za.dims(), &[2, 9, 8]);
        assert_eq!(branch.decode(&za).unwrap().dims(), &[2, 9, 3, 2]);
        let short_asr = Tensor::zeros((2, 8, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(branch.encode_audio(&mel, Some(&short_asr)).is_err());
        assert!(branch.encode_audio(&mel, None).is_err());
    }
}
