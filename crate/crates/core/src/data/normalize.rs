use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels whose spread falls below this are treated as constant.
const MIN_STD: f32 = 1e-4;

/// Per-coordinate-channel standardization for one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseNormalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl PoseNormalizer {
    /// Fits over frames `T x J x 2` drawn from the speaker's training data.
    pub fn fit<'a, I>(sequences: I) -> Result<Self>
    where
        I: IntoIterator<Item = ArrayView3<'a, f32>>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for seq in sequences {
            let (_, j, c) = seq.dim();
            if sum.is_empty() {
                sum = vec![0.0; j * c];
                sq = vec![0.0; j * c];
            } else if sum.len() != j * c {
                return Err(Error::Argument("sequences disagree in keypoint count".into()));
            }
            for frame in seq.outer_iter() {
                for (k, &v) in frame.iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Argument("no frames to fit normalization".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = ((q / n as f64 - m * m).max(0.0)).sqrt() as f32;
                if s < MIN_STD { 1.0 } else { s }
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, x: &ArrayView3<'_, f32>) -> Result<()> {
        let (_, j, c) = x.dim();
        if j * c != self.mean.len() {
            return Err(Error::Argument(format!(
                "normalizer covers {} channels, input has {}",
                self.mean.len(),
                j * c
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, x: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        self.check(&x)?;
        let mut out = x.to_owned();
        for mut frame in out.outer_iter_mut() {
            for (k, v) in frame.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        self.check(&x)?;
        let mut out = x.to_owned();
        for mut frame in out.outer_iter_mut() {
            for (k, v) in frame.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        Ok(out)
    }

    /// Restricts to a subset of keypoints (e.g. the body indices).
    pub fn select(&self, keypoints: &[usize]) -> Self {
        let pick = |v: &[f32]| keypoints.iter().flat_map(|&j| [v[2 * j], v[2 * j + 1]]).collect();
        Self {
            mean: pick(&self.mean),
            std: pick(&self.std),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unit_stats() {
        let x = Array3::from_shape_fn((50, 3, 2), |(t, j, c)| (t as f32 * 0.1 + j as f32) * (c as f32 + 1.0));
        let norm = PoseNormalizer::fit([x.view()]).unwrap();
        let z = norm.normalize(x.view()).unwrap();
        let back = norm.denormalize(z.view()).unwrap();
        assert!(back.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-4));
        let col: Vec<f32> = z.outer_iter().map(|f| f[[1, 0]]).collect();
        let mean = col.iter().sum::<f32>() / col.len() as f32;
        assert!(mean.abs() < 1e-5);
    }

    #[test]
    fn constant_channels_stay_finite() {
        let x = Array3::from_elem((10, 2, 2), 0.4f32);
        let norm = PoseNormalizer::fit([x.view()]).unwrap();
        let z = norm.normalize(x.view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }
}
