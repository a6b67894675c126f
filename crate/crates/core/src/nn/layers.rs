//! Dense, convolutional and recurrent layers over candle tensors.
//!
//! Weights follow the PyTorch layouts and default initialization
//! (uniform in `±1/sqrt(fan_in)`).

use candle_core::{Tensor, D};

use super::ops::{leaky_relu, sigmoid};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            w: store.uniform(&format!("{name}.w"), &[out_dim, in_dim], bound)?,
            b: store.uniform(&format!("{name}.b"), &[out_dim], bound)?,
            in_dim,
            out_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Applies to the last axis of a tensor of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| Error::Argument("linear input is a scalar".into()))?;
        if last != self.in_dim {
            return Err(Error::Argument(format!(
                "linear layer expects {} input features, got {last}",
                self.in_dim
            )));
        }
        let rows = x.elem_count() / last;
        let y = x
            .reshape((rows, last))?
            .matmul(&self.w.t()?)?
            .broadcast_add(&self.b)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

/// Stride-1 convolution with same-length padding over `(B, C, T)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: Tensor,
    b: Tensor,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Argument("same-padding convolutions need an odd kernel".into()));
        }
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        Ok(Self {
            w: store.uniform(&format!("{name}.w"), &[out_ch, in_ch, kernel], bound)?,
            b: store.uniform(&format!("{name}.b"), &[out_ch], bound)?,
            padding: kernel / 2,
        })
    }

    /// Computed as one matrix product over the stacked shifted inputs,
    /// which is much cheaper to differentiate on CPU than a direct convolution.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let (out_ch, in_ch, k) = self.w.dims3()?;
        if c != in_ch {
            return Err(Error::Argument(format!("convolution expects {in_ch} channels, got {c}")));
        }
        let xp = x.pad_with_zeros(D::Minus1, self.padding, self.padding)?;
        let taps: Vec<Tensor> = (0..k).map(|j| xp.narrow(D::Minus1, j, t)).collect::<candle_core::Result<_>>()?;
        // (B, C, k, T) matches the (out, C, k) weight layout.
        let cols = Tensor::stack(&taps, 2)?.reshape((b, c * k, t))?.transpose(1, 2)?.reshape((b * t, c * k))?;
        let y = cols.matmul(&self.w.reshape((out_ch, in_ch * k))?.t()?)?.broadcast_add(&self.b)?;
        Ok(y.reshape((b, t, out_ch))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Stack of convolutions, each followed by a leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvStack {
    layers: Vec<Conv1d>,
}

impl ConvStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        channels: &[usize],
        kernel: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(channels.len());
        let mut prev = in_ch;
        for (i, &c) in channels.iter().enumerate() {
            layers.push(Conv1d::new(store, &format!("{name}.{i}"), prev, c, kernel)?);
            prev = c;
        }
        Ok(Self { layers })
    }

    /// `(B, C, T)` to `(B, C_out, T)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = leaky_relu(&layer.forward(&h)?)?;
        }
        Ok(h)
    }
}

/// Gated recurrent unit (gate order r, z, n).
#[derive(Debug, Clone)]
pub struct Gru {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    in_dim: usize,
    hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: store.uniform(&format!("{name}.w_ih"), &[3 * hidden, in_dim], bound)?,
            w_hh: store.uniform(&format!("{name}.w_hh"), &[3 * hidden, hidden], bound)?,
            b_ih: store.uniform(&format!("{name}.b_ih"), &[3 * hidden], bound)?,
            b_hh: store.uniform(&format!("{name}.b_hh"), &[3 * hidden], bound)?,
            in_dim,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs forward in time over `(B, T, in)` from a zero state and returns
    /// every hidden state, `(B, T, H)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        if d != self.in_dim {
            return Err(Error::Argument(format!(
                "recurrent layer expects {} input features, got {d}",
                self.in_dim
            )));
        }
        let h = self.hidden;
        let gi = x
            .reshape((b * t, d))?
            .matmul(&self.w_ih.t()?)?
            .broadcast_add(&self.b_ih)?
            .reshape((b, t, 3 * h))?;
        let steps = split_steps(&gi)?;
        let w_hh_t = self.w_hh.t()?;
        let mut state = Tensor::zeros((b, h), x.dtype(), x.device())?;
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let gi_t = steps[step].clone();
            let gh = state.matmul(&w_hh_t)?.broadcast_add(&self.b_hh)?;
            let r = sigmoid(&(gi_t.narrow(1, 0, h)? + gh.narrow(1, 0, h)?)?)?;
            let z = sigmoid(&(gi_t.narrow(1, h, h)? + gh.narrow(1, h, h)?)?)?;
            let n = (gi_t.narrow(1, 2 * h, h)? + (r * gh.narrow(1, 2 * h, h)?)?)?.tanh()?;
            // h' = n + z * (h - n)
            state = (&n + (z * (&state - &n)?)?)?;
            outputs.push(state.clone());
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }

    /// Final hidden state, `(B, H)`.
    pub fn last_state(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.forward(x)?;
        let t = out.dim(1)?;
        Ok(out.narrow(1, t - 1, 1)?.squeeze(1)?)
    }
}

/// Splits `(B, T, C)` into `T` tensors `(B, C)`. Going through chunks of
/// about `sqrt(T)` steps keeps the backward pass of the slicing linear-ish
/// in `T` instead of quadratic.
fn split_steps(x: &Tensor) -> Result<Vec<Tensor>> {
    let t = x.dim(1)?;
    let chunk = ((t as f64).sqrt().ceil() as usize).max(1);
    let mut out = Vec::with_capacity(t);
    let mut start = 0;
    while start < t {
        let len = chunk.min(t - start);
        let block = x.narrow(1, start, len)?;
        for i in 0..len {
            out.push(block.narrow(1, i, 1)?.squeeze(1)?);
        }
        start += len;
    }
    Ok(out)
}

/// 1-D UNet over time: `levels` average-pool/upsample stages with skip
/// connections, all at one channel width, and a pointwise output projection.
#[derive(Debug, Clone)]
pub struct UNet1d {
    input: Conv1d,
    down: Vec<Conv1d>,
    up: Vec<Conv1d>,
    output: Conv1d,
    levels: usize,
}

impl UNet1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        width: usize,
        out_ch: usize,
        levels: usize,
    ) -> Result<Self> {
        let input = Conv1d::new(store, &format!("{name}.in"), in_ch, width, 3)?;
        let down = (0..levels)
            .map(|l| Conv1d::new(store, &format!("{name}.down{l}"), width, width, 3))
            .collect::<Result<_>>()?;
        let up = (0..levels)
            .map(|l| Conv1d::new(store, &format!("{name}.up{l}"), 2 * width, width, 3))
            .collect::<Result<_>>()?;
        let output = Conv1d::new(store, &format!("{name}.out"), width, out_ch, 1)?;
        Ok(Self {
            input,
            down,
            up,
            output,
            levels,
        })
    }

    /// `(B, C_in, T)` to `(B, C_out, T)` for any `T ≥ 1`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, t) = x.dims3()?;
        let unit = 1usize << self.levels;
        let padded = t.div_ceil(unit) * unit;
        let x = x.pad_with_zeros(D::Minus1, 0, padded - t)?;
        let mut h = leaky_relu(&self.input.forward(&x)?)?;
        let mut skips = Vec::with_capacity(self.levels);
        for conv in &self.down {
            skips.push(h.clone());
            let (c, len) = (h.dim(1)?, h.dim(2)?);
            let pooled = h.reshape((b, c, len / 2, 2))?.mean(D::Minus1)?;
            h = leaky_relu(&conv.forward(&pooled)?)?;
        }
        for conv in self.up.iter().rev() {
            let skip = skips.pop().expect("one skip per level");
            let up = h.upsample_nearest1d(skip.dim(2)?)?;
            h = leaky_relu(&conv.forward(&Tensor::cat(&[&up, &skip], 1)?)?)?;
        }
        Ok(self.output.forward(&h)?.narrow(D::Minus1, 0, t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut s = ParamStore::new(seed, DType::F64);
        s.uniform("x", shape, 1.0).unwrap()
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut s = ParamStore::new(3, DType::F64);
        let lin = Linear::new(&mut s, "l", 3, 2).unwrap();
        let x = randn(&[4, 3], 9);
        let y = lin.forward(&x.reshape((2, 2, 3)).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 2, 2]);
        let w = s.get("l.w").unwrap().to_vec2::<f64>().unwrap();
        let b = s.get("l.b").unwrap().to_vec1::<f64>().unwrap();
        let xv = x.to_vec2::<f64>().unwrap();
        let yv = y.reshape((4, 2)).unwrap().to_vec2::<f64>().unwrap();
        for r in 0..4 {
            for o in 0..2 {
                let e: f64 = (0..3).map(|i| w[o][i] * xv[r][i]).sum::<f64>() + b[o];
                assert!((yv[r][o] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_single_step_matches_equations() {
        let mut s = ParamStore::new(5, DType::F64);
        let gru = Gru::new(&mut s, "g", 2, 3).unwrap();
        let x = randn(&[1, 1, 2], 1);
        let h = gru.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let w_ih = s.get("g.w_ih").unwrap().to_vec2::<f64>().unwrap();
        let b_ih = s.get("g.b_ih").unwrap().to_vec1::<f64>().unwrap();
        let b_hh = s.get("g.b_hh").unwrap().to_vec1::<f64>().unwrap();
        let xv = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for k in 0..3 {
            let gi = |g: usize| (0..2).map(|i| w_ih[g * 3 + k][i] * xv[i]).sum::<f64>() + b_ih[g * 3 + k];
            // Zero previous state: gh is just the recurrent bias.
            let r = sig(gi(0) + b_hh[k]);
            let z = sig(gi(1) + b_hh[3 + k]);
            let n = (gi(2) + r * b_hh[6 + k]).tanh();
            assert!((h[k] - (1.0 - z) * n).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_is_causal() {
        let mut s = ParamStore::new(2, DType::F64);
        let gru = Gru::new(&mut s, "g", 4, 5).unwrap();
        let a = randn(&[1, 6, 4], 3);
        let tail = randn(&[1, 1, 4], 4);
        let b = Tensor::cat(&[&a.narrow(1, 0, 5).unwrap(), &tail], 1).unwrap();
        let ya = gru.forward(&a).unwrap().narrow(1, 0, 5).unwrap();
        let yb = gru.forward(&b).unwrap().narrow(1, 0, 5).unwrap();
        assert_eq!(
            ya.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            yb.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }

    #[test]
    fn unet_preserves_length_and_zero() {
        let mut s = ParamStore::new(1, DType::F32);
        let net = UNet1d::new(&mut s, "u", 5, 8, 6, 3).unwrap();
        for t in [1usize, 7, 64] {
            let x = Tensor::ones((2, 5, t), DType::F32, &Device::Cpu).unwrap();
            assert_eq!(net.forward(&x).unwrap().dims(), &[2, 6, t]);
        }
        s.zero_biases().unwrap();
        let z = Tensor::zeros((1, 5, 20), DType::F32, &Device::Cpu).unwrap();
        let y = net.forward(&z).unwrap();
        assert!(y.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_is_shift_equivariant_in_interior() {
        let mut s = ParamStore::new(4, DType::F64);
        let conv = Conv1d::new(&mut s, "c", 2, 3, 5).unwrap();
        let x = randn(&[1, 2, 30], 8);
        let shifted = x.pad_with_zeros(2, 3, 0).unwrap().narrow(2, 0, 30).unwrap();
        let a = conv.forward(&x).unwrap().to_vec3::<f64>().unwrap();
        let b = conv.forward(&shifted).unwrap().to_vec3::<f64>().unwrap();
        for c in 0..3 {
            for t in 2..25 {
                assert!((a[0][c][t] - b[0][c][t + 3]).abs() < 1e-12);
            }
        }
    }
}
