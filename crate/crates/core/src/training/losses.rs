//! Training objectives over keypoint tensors `(B, T, J, 2)`.
//!
//! Every loss is computed per sequence and averaged over the batch.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::scalar;

fn check_shapes(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Argument(format!(
            "{what}: prediction {:?} and target {:?} differ in shape",
            a.dims(),
            b.dims()
        )));
    }
    if a.rank() != 4 {
        return Err(Error::Argument(format!("{what}: expected (B, T, J, 2), got {:?}", a.dims())));
    }
    Ok(())
}

/// `(1/T) Σ_t ‖pred_t − truth_t‖₁`, batch mean.
pub fn reconstruction_loss(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    check_shapes(pred, truth, "reconstruction loss")?;
    let per_frame = (pred - truth)?.abs()?.sum(D::Minus1)?.sum(D::Minus1)?;
    Ok(per_frame.mean(D::Minus1)?.mean(0)?)
}

/// L1 regression over whole gestures. The frame norm sums over every
/// keypoint, so it equals the sum of the per-part reconstruction losses.
pub fn regression_loss(pred_body: &Tensor, body: &Tensor, face: Option<(&Tensor, &Tensor)>) -> Result<Tensor> {
    let l = reconstruction_loss(pred_body, body)?;
    match face {
        Some((pred_face, face)) => Ok((l + reconstruction_loss(pred_face, face)?)?),
        None => Ok(l),
    }
}

/// Elementwise Huber: `½d²` for `|d| ≤ δ`, `δ(|d| − ½δ)` above. Written as
/// `q(|d| − ½q)` with `q = min(|d|, δ)`.
pub fn huber(diff: &Tensor, delta: f64) -> Result<Tensor> {
    let a = diff.abs()?;
    let q = a.minimum(delta)?;
    Ok((&q * (a - q.affine(0.5, 0.0)?)?)?)
}

/// Per-frame Huber averaged over the frame's coordinates.
fn frame_huber(pred: &Tensor, truth: &Tensor, delta: f64) -> Result<Tensor> {
    let h = huber(&(pred - truth)?, delta)?;
    Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// `(1/2T)(Σ_t HL_body,t + Σ_t HL_face,t)`, batch mean. Without a face part
/// this is the body mean `(1/T) Σ_t HL_body,t`.
pub fn huber_part_loss(
    pred_body: &Tensor,
    body: &Tensor,
    face: Option<(&Tensor, &Tensor)>,
    delta: f64,
) -> Result<Tensor> {
    if !(delta > 0.0) {
        return Err(Error::Argument("Huber delta must be positive".into()));
    }
    check_shapes(pred_body, body, "Huber body part")?;
    let hb = frame_huber(pred_body, body, delta)?;
    match face {
        Some((pred_face, face)) => {
            check_shapes(pred_face, face, "Huber face part")?;
            let hf = frame_huber(pred_face, face, delta)?;
            let t = hb.dim(1)?;
            Ok(((hb.sum(1)? + hf.sum(1)?)? / (2.0 * t as f64))?.mean(0)?)
        }
        None => Ok(hb.mean(1)?.mean(0)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_reg: f64,
    pub lambda_h: f64,
    pub lambda_con: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 10.0,
            lambda_reg: 10.0,
            lambda_h: 20.0,
            lambda_con: 1.0,
            lambda_c: 1.0,
        }
    }
}

/// Loss terms of one step; absent terms contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub recon: Option<Tensor>,
    pub reg: Option<Tensor>,
    pub huber: Option<Tensor>,
    pub con: Option<Tensor>,
    pub align: Option<Tensor>,
}

impl LossComponents {
    fn named(&self) -> [(&'static str, Option<&Tensor>); 5] {
        [
            ("reconstruction", self.recon.as_ref()),
            ("regression", self.reg.as_ref()),
            ("huber", self.huber.as_ref()),
            ("consistency", self.con.as_ref()),
            ("alignment", self.align.as_ref()),
        ]
    }

    /// Scalar values, with absent terms reported as 0.
    pub fn values(&self) -> Result<[f64; 5]> {
        let mut out = [0.0; 5];
        for (slot, (_, t)) in out.iter_mut().zip(self.named()) {
            if let Some(t) = t {
                *slot = scalar(t)?;
            }
        }
        Ok(out)
    }
}

/// `λ_r L_recon + λ_reg L_reg + λ_h L_huber + λ_con L_con + λ_c L_c`.
///
/// A zero weight drops the term from the graph entirely. A non-finite term
/// is reported as divergence of that component.
pub fn total_loss(parts: &LossComponents, w: &LossWeights) -> Result<Tensor> {
    let weights = [w.lambda_r, w.lambda_reg, w.lambda_h, w.lambda_con, w.lambda_c];
    if weights.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Config("loss weights must be non-negative".into()));
    }
    let mut total: Option<Tensor> = None;
    for ((name, term), lambda) in parts.named().into_iter().zip(weights) {
        let Some(term) = term else { continue };
        let v = scalar(term)?;
        if !v.is_finite() {
            return Err(Error::Divergence {
                component: name.to_string(),
            });
        }
        if lambda == 0.0 {
            continue;
        }
        let scaled = term.affine(lambda, 0.0)?;
        total = Some(match total {
            Some(t) => (t + scaled)?,
            None => scaled,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Err(Error::Config("every loss term is disabled or zero-weighted".into())),
    }
}
