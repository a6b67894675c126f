use candle_core::{DType, Device, Tensor, D};
use ndarray::{ArrayView2, ArrayView3};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Logistic function written through `tanh` so it stays differentiable and
/// saturates without overflow.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LEAKY_SLOPE, 0.0)?)?)
}

/// Softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Scalar value of a 0-d or single-element tensor as `f64`.
pub fn scalar(x: &Tensor) -> Result<f64> {
    Ok(x.flatten_all()?
        .to_dtype(candle_core::DType::F64)?
        .to_vec1::<f64>()?[0])
}

/// Stacks equal-shape `T x J x C` arrays into a `(N, T, J, C)` tensor.
pub fn stack_sequences(views: &[ArrayView3<'_, f32>], dtype: DType) -> Result<Tensor> {
    let Some(first) = views.first() else {
        return Err(Error::Argument("nothing to stack".into()));
    };
    let (t, j, c) = first.dim();
    let mut data = Vec::with_capacity(views.len() * t * j * c);
    for v in views {
        if v.dim() != (t, j, c) {
            return Err(Error::Argument(format!("sequence shapes {:?} and {:?} differ", first.dim(), v.dim())));
        }
        data.extend(v.iter().copied());
    }
    Ok(Tensor::from_vec(data, (views.len(), t, j, c), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Stacks equal-shape `T x C` arrays into a `(N, T, C)` tensor.
pub fn stack_matrices(views: &[ArrayView2<'_, f32>], dtype: DType) -> Result<Tensor> {
    let Some(first) = views.first() else {
        return Err(Error::Argument("nothing to stack".into()));
    };
    let (t, c) = first.dim();
    let mut data = Vec::with_capacity(views.len() * t * c);
    for v in views {
        if v.dim() != (t, c) {
            return Err(Error::Argument(format!("matrix shapes {:?} and {:?} differ", first.dim(), v.dim())));
        }
        data.extend(v.iter().copied());
    }
    Ok(Tensor::from_vec(data, (views.len(), t, c), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn sigmoid_values() {
        let x = Tensor::new(&[-30.0f64, 0.0, 2.0], &Device::Cpu).unwrap();
        let y = sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!(y[0] > 0.0 && y[0] < 1e-12);
        assert_eq!(y[1], 0.5);
        assert!((y[2] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [1000.0, 1000.0, 0.0]], &Device::Cpu).unwrap();
        let y = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in &y {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((y[1][0] - 0.5).abs() < 1e-12);
    }
}
