//! WAV I/O and log-mel features aligned to pose frames.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    if channels > 1 {
        log::warn!("{}: downmixing {channels} channels to mono", path.display());
    }
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes 32-bit float mono WAV.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &wave.samples {
        writer.write_sample(s).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub n_fft: usize,
    pub log_floor: f64,
    pub f_min: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            window_ms: 25.0,
            n_fft: 512,
            log_floor: 1e-5,
            f_min: 0.0,
            f_max: None,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelConfig {
    fn window_len(&self, sample_rate: u32) -> usize {
        ((self.window_ms * 1e-3 * sample_rate as f64).round() as usize).max(1)
    }

    fn band_edges_hz(&self, sample_rate: u32) -> Vec<f64> {
        let f_max = self.f_max.unwrap_or(sample_rate as f64 / 2.0);
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(f_max));
        (0..self.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64))
            .collect()
    }

    /// Center frequency of mel band `m`.
    pub fn band_center_hz(&self, m: usize, sample_rate: u32) -> f64 {
        self.band_edges_hz(sample_rate)[m + 1]
    }

    /// Triangular (HTK-style, unit peak) filters, `n_mels x (n_fft/2 + 1)`.
    pub fn filterbank(&self, sample_rate: u32) -> Array2<f64> {
        let n_bins = self.n_fft / 2 + 1;
        let edges = self.band_edges_hz(sample_rate);
        Array2::from_shape_fn((self.n_mels, n_bins), |(m, k)| {
            let f = k as f64 * sample_rate as f64 / self.n_fft as f64;
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            }
        })
    }
}

/// Log-mel spectrogram with exactly `target_frames` rows.
///
/// Windows are centred on multiples of a hop derived from the clip duration,
/// so row `t` describes the audio around pose frame `t`.
pub fn extract_mel(
    waveform: &[f32],
    sample_rate: u32,
    target_frames: usize,
    cfg: &MelConfig,
) -> Result<Array2<f32>> {
    if waveform.is_empty() {
        return Err(Error::Argument("cannot extract mel from an empty waveform".into()));
    }
    if target_frames == 0 {
        return Err(Error::Argument("target frame count must be positive".into()));
    }
    if cfg.n_fft < cfg.window_len(sample_rate) {
        return Err(Error::Argument(format!(
            "n_fft {} shorter than the {} ms window",
            cfg.n_fft, cfg.window_ms
        )));
    }
    let n = waveform.len();
    let hop = (n / target_frames).max(1);
    let n_frames = n.div_ceil(hop).max(target_frames);
    let win = cfg.window_len(sample_rate);
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let bank = cfg.filterbank(sample_rate);
    let n_bins = cfg.n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0f64; n_bins];
    let mut mel = Array2::<f32>::zeros((n_frames, cfg.n_mels));
    for j in 0..n_frames {
        let start = (j * hop) as isize - (win / 2) as isize;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            let idx = start + i as isize;
            if idx >= 0 && (idx as usize) < n {
                buf[i].re = waveform[idx as usize] as f64 * w;
            }
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let e: f64 = bank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            mel[[j, m]] = e.max(cfg.log_floor).ln() as f32;
        }
    }
    let step = (n as f64 / target_frames as f64) / hop as f64;
    Ok(resample_with_step(mel.view(), target_frames, step))
}

/// Linear time resampling to `target` rows, aligning row `t` with source
/// position `t * N / target`.
pub fn resample_frames(src: ArrayView2<'_, f32>, target: usize) -> Array2<f32> {
    let step = src.nrows() as f64 / target as f64;
    resample_with_step(src, target, step)
}

fn resample_with_step(src: ArrayView2<'_, f32>, target: usize, step: f64) -> Array2<f32> {
    let (n, d) = src.dim();
    let mut out = Array2::zeros((target, d));
    for t in 0..target {
        let pos = (t as f64 * step).min((n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let w = (pos - i0 as f64) as f32;
        for c in 0..d {
            let a = src[[i0, c]];
            out[[t, c]] = a + w * (src[[i1, c]] - a);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_maps_to_log_floor() {
        let mel = extract_mel(&vec![0.0; 16_000], 16_000, 20, &MelConfig::default()).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(mel.iter().all(|&v| v == floor));
    }

    #[test]
    fn shape_contract_for_one_segment() {
        let n = (4.2667 * 16_000.0) as usize;
        let wave: Vec<f32> = (0..n).map(|i| (i as f32 * 0.01).sin()).collect();
        let mel = extract_mel(&wave, 16_000, 64, &MelConfig::default()).unwrap();
        assert_eq!(mel.dim(), (64, 64));
        assert!(mel.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_waveform_is_rejected() {
        assert!(extract_mel(&[], 16_000, 4, &MelConfig::default()).is_err());
    }

    #[test]
    fn resample_halves_and_preserves_constants() {
        let src = Array2::from_shape_fn((128, 3), |(t, c)| (t + c) as f32);
        let out = resample_frames(src.view(), 64);
        assert_eq!(out.dim(), (64, 3));
        assert_eq!(out[[10, 0]], 20.0);
        let flat = Array2::from_elem((7, 2), 3.5f32);
        assert!(resample_frames(flat.view(), 20).iter().all(|&v| v == 3.5));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = Waveform {
            samples: vec![0.25, -0.5, 1.5],
            sample_rate: 16_000,
        };
        write_wav(&path, &wave).unwrap();
        assert_eq!(read_wav(&path).unwrap(), wave);
    }
}
