//! Audio onsets, kinematic motion beats and their consistency score.

use std::f64::consts::PI;

use ndarray::ArrayView3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetConfig {
    pub window_s: f64,
    pub hop_s: f64,
    /// Peaks below this fraction of the strongest onset are ignored.
    pub relative_threshold: f64,
    pub min_gap_s: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self {
            window_s: 0.02,
            hop_s: 0.01,
            relative_threshold: 0.3,
            min_gap_s: 0.2,
        }
    }
}

pub const DEFAULT_BC_SIGMA: f64 = 0.1;

/// Onset times (seconds) from the positive half-wave rectified derivative of
/// the RMS envelope. The envelope is normalized by its peak, so scaling the
/// waveform leaves the result unchanged.
pub fn extract_audio_beats(waveform: &[f32], sample_rate: u32, cfg: &OnsetConfig) -> Vec<f64> {
    let sr = sample_rate as f64;
    let win = ((cfg.window_s * sr).round() as usize).max(1);
    let hop = ((cfg.hop_s * sr).round() as usize).max(1);
    if waveform.len() < win {
        return Vec::new();
    }
    let n_frames = (waveform.len() - win) / hop + 1;
    let rms: Vec<f64> = (0..n_frames)
        .map(|j| {
            let w = &waveform[j * hop..j * hop + win];
            (w.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / win as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    // Energy before the first window counts as silence.
    let flux: Vec<f64> = (0..n_frames)
        .map(|j| {
            let prev = if j == 0 { 0.0 } else { rms[j - 1] };
            ((rms[j] - prev) / peak).max(0.0)
        })
        .collect();
    let strongest = flux.iter().cloned().fold(0.0, f64::max);
    if strongest <= 0.0 {
        return Vec::new();
    }
    let floor = cfg.relative_threshold * strongest;
    let gap = ((cfg.min_gap_s / cfg.hop_s).round() as usize).max(1);

    // Candidate peaks, strongest first; keep those clear of already kept ones.
    let mut candidates: Vec<usize> = (0..flux.len())
        .filter(|&i| {
            flux[i] >= floor
                && (i == 0 || flux[i] > flux[i - 1])
                && (i + 1 == flux.len() || flux[i] >= flux[i + 1])
        })
        .collect();
    candidates.sort_by(|&a, &b| flux[b].total_cmp(&flux[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    // An onset is placed at the end of the first window that sees the rise.
    kept.into_iter().map(|j| (j * hop + win) as f64 / sr).collect()
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Per-frame bone-angle change magnitude, `Σ_bones |Δangle|` by central
/// differences. Frames 0 and T-1 have no value, so the result has length T-2
/// and entry `i` belongs to frame `i + 1`.
pub fn angle_change_signal(body: ArrayView3<'_, f32>, bones: &[(usize, usize)]) -> Vec<f64> {
    let t = body.dim().0;
    if t < 3 {
        return Vec::new();
    }
    let angles: Vec<Vec<f64>> = body
        .outer_iter()
        .map(|f| {
            bones
                .iter()
                .map(|&(a, b)| {
                    let dx = f[[b, 0]] as f64 - f[[a, 0]] as f64;
                    let dy = f[[b, 1]] as f64 - f[[a, 1]] as f64;
                    dy.atan2(dx)
                })
                .collect()
        })
        .collect();
    (1..t - 1)
        .map(|i| {
            angles[i + 1]
                .iter()
                .zip(&angles[i - 1])
                .map(|(n, p)| wrap_angle(n - p).abs() / 2.0)
                .sum()
        })
        .collect()
}

/// Motion beats (seconds): strict local minima of the angle-change signal
/// that lie below the signal mean.
pub fn extract_motion_beats(body: ArrayView3<'_, f32>, bones: &[(usize, usize)], fps: f32) -> Vec<f64> {
    let c = angle_change_signal(body, bones);
    if c.len() < 3 {
        return Vec::new();
    }
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    (1..c.len() - 1)
        .filter(|&i| c[i] < c[i - 1] && c[i] < c[i + 1] && c[i] < mean)
        .map(|i| (i + 1) as f64 / fps as f64)
        .collect()
}

/// Mean over audio beats of `exp(-d² / 2σ²)`, `d` the distance to the
/// nearest motion beat. Empty motion beats give 0; empty audio beats give 0
/// with a warning.
pub fn beat_consistency(audio_beats: &[f64], motion_beats: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Argument("beat consistency sigma must be positive".into()));
    }
    if audio_beats.is_empty() {
        log::warn!("beat consistency undefined without audio beats; reporting 0");
        return Ok(0.0);
    }
    if motion_beats.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = audio_beats
        .iter()
        .map(|a| {
            let d = motion_beats
                .iter()
                .map(|m| (a - m).abs())
                .fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / audio_beats.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn silence_has_no_onsets() {
        assert!(extract_audio_beats(&[0.0; 16_000], 16_000, &OnsetConfig::default()).is_empty());
    }

    #[test]
    fn single_impulse_is_found_within_one_hop() {
        let mut w = vec![0.0f32; 32_000];
        w[16_000] = 1.0;
        let beats = extract_audio_beats(&w, 16_000, &OnsetConfig::default());
        assert_eq!(beats.len(), 1);
        assert!((beats[0] - 1.0).abs() <= 0.01 + 1e-9, "{beats:?}");
    }

    #[test]
    fn onsets_are_scale_invariant() {
        let w: Vec<f32> = (0..24_000)
            .map(|n| if n % 8_000 < 400 { ((n as f32) * 0.7).sin() } else { 0.0 })
            .collect();
        let cfg = OnsetConfig::default();
        let a = extract_audio_beats(&w, 16_000, &cfg);
        let scaled: Vec<f32> = w.iter().map(|x| x * 0.125).collect();
        assert_eq!(a, extract_audio_beats(&scaled, 16_000, &cfg));
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn constant_pose_has_no_beats() {
        let body = Array3::from_elem((20, 3, 2), 0.5f32);
        assert!(extract_motion_beats(body.view(), &[(0, 1), (1, 2)], 15.0).is_empty());
    }

    #[test]
    fn angle_wrap_takes_short_way() {
        assert!((wrap_angle(2.0 * PI - 0.1) + 0.1).abs() < 1e-12);
        assert!((wrap_angle(-2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bc_kernel_values() {
        assert_eq!(beat_consistency(&[0.5, 1.0], &[0.5, 1.0], 0.1).unwrap(), 1.0);
        let v = beat_consistency(&[1.0], &[1.1], 0.1).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-9);
        assert_eq!(beat_consistency(&[1.0], &[], 0.1).unwrap(), 0.0);
        assert_eq!(beat_consistency(&[], &[1.0], 0.1).unwrap(), 0.0);
        assert!(beat_consistency(&[1.0], &[1.0], 0.0).is_err());
    }
}
