//! Sequence-level saliency labels derived from distance to the resting pose.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::corpus::GestureSample;
use crate::error::{Error, Result};

/// Grid step used to find the modal body posture.
pub const RESTING_GRID_STEP: f64 = 0.05;

/// Most frequent body posture: poses are quantized to a grid, the fullest
/// cell wins (ties go to the lexicographically smallest cell), and the raw
/// poses inside that cell are averaged.
pub fn compute_resting_pose<'a, I>(body_frames: I, grid_step: f64) -> Result<Array2<f32>>
where
    I: IntoIterator<Item = ArrayView2<'a, f32>>,
{
    if !(grid_step > 0.0) {
        return Err(Error::Argument("grid step must be positive".into()));
    }
    let mut cells: BTreeMap<Vec<i64>, (usize, Vec<f64>)> = BTreeMap::new();
    let mut shape = None;
    for frame in body_frames {
        match shape {
            None => shape = Some(frame.dim()),
            Some(s) if s != frame.dim() => {
                return Err(Error::Argument(format!(
                    "body frames disagree in shape: {s:?} vs {:?}",
                    frame.dim()
                )))
            }
            _ => {}
        }
        let key: Vec<i64> = frame
            .iter()
            .map(|&v| (v as f64 / grid_step).floor() as i64)
            .collect();
        let entry = cells
            .entry(key)
            .or_insert_with(|| (0, vec![0.0; frame.len()]));
        entry.0 += 1;
        for (acc, &v) in entry.1.iter_mut().zip(frame.iter()) {
            *acc += v as f64;
        }
    }
    let shape = shape.ok_or_else(|| Error::Argument("no frames to derive a resting pose".into()))?;
    // BTreeMap iterates in ascending key order, so the first maximum is the tie winner.
    let (count, sum) = cells
        .values()
        .fold(None::<&(usize, Vec<f64>)>, |best, cell| match best {
            Some(b) if b.0 >= cell.0 => Some(b),
            _ => Some(cell),
        })
        .expect("at least one cell");
    let mean: Vec<f32> = sum.iter().map(|s| (s / *count as f64) as f32).collect();
    Ok(Array2::from_shape_vec(shape, mean).expect("shape preserved"))
}

/// Per-frame L2 distance between body poses `T x J_b x 2` and the resting pose.
pub fn frame_distances(body: ArrayView3<'_, f32>, resting: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
    let (_, j, c) = body.dim();
    if (j, c) != resting.dim() {
        return Err(Error::Argument(format!(
            "body frames are {j} x {c}, resting pose is {:?}",
            resting.dim()
        )));
    }
    Ok(body
        .outer_iter()
        .map(|frame| {
            frame
                .iter()
                .zip(resting.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean plus three population standard deviations of all distances.
pub fn triple_sigma_threshold(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Argument("no distances to derive a threshold from".into()));
    }
    let n = distances.len() as f64;
    // Shifted by the first value so a constant input yields its exact value.
    let d0 = distances[0];
    let mean = d0 + distances.iter().map(|d| d - d0).sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(mean + 3.0 * var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSaliencyLabel {
    pub label: u8,
    pub distances: Vec<f64>,
    pub threshold: f64,
}

pub fn derive_sequence_label(
    sample: &GestureSample,
    resting: ArrayView2<'_, f32>,
    threshold: f64,
) -> Result<SequenceSaliencyLabel> {
    let body = sample.pose.body();
    let distances = frame_distances(body.view(), resting)?;
    let label = distances.iter().any(|&d| d > threshold) as u8;
    Ok(SequenceSaliencyLabel {
        label,
        distances,
        threshold,
    })
}

/// Resting pose and threshold for one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSaliency {
    pub resting: Vec<f32>,
    pub body_points: usize,
    pub threshold: f64,
}

impl SpeakerSaliency {
    /// Fits resting pose and threshold over a speaker's training samples.
    pub fn fit(samples: &[&GestureSample]) -> Result<Self> {
        let bodies: Vec<_> = samples.iter().map(|s| s.pose.body()).collect();
        let resting = compute_resting_pose(
            bodies.iter().flat_map(|b| b.outer_iter()),
            RESTING_GRID_STEP,
        )?;
        let mut all = Vec::new();
        for b in &bodies {
            all.extend(frame_distances(b.view(), resting.view())?);
        }
        Ok(Self {
            body_points: resting.nrows(),
            resting: resting.iter().copied().collect(),
            threshold: triple_sigma_threshold(&all)?,
        })
    }

    pub fn resting_pose(&self) -> Array2<f32> {
        Array2::from_shape_vec((self.body_points, 2), self.resting.clone()).expect("consistent")
    }

    pub fn label(&self, sample: &GestureSample) -> Result<SequenceSaliencyLabel> {
        derive_sequence_label(sample, self.resting_pose().view(), self.threshold)
    }
}
