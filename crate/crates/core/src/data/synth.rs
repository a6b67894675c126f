//! Deterministic synthetic corpus with known audio-to-pose laws.
//!
//! Every sequence is a speaker alternating between phrases and pauses:
//!
//! * audio is a harmonic carrier shaped by an amplitude envelope, plus
//!   decaying clicks on a beat grid inside each phrase;
//! * both arms are lifted in proportion to the low-passed energy of the
//!   envelope, and salient sequences carry a planted energy spike that lifts
//!   them far beyond the usual range;
//! * the hands swing back and forth about the wrist between beats, turning
//!   around exactly on the interior beats of a phrase;
//! * the lower lip opens in proportion to the instantaneous envelope.
//!
//! Ground truth (saliency masks, beat times, per-frame energy and envelope)
//! is written next to each sequence so tests can check recovered quantities
//! against the generating schedule.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::audio::{write_wav, Waveform, DEFAULT_SAMPLE_RATE};
use super::corpus::{CorpusManifest, ManifestEntry, Split};
use super::layout::{body, SkeletonLayout};
use super::pose::{write_gpos, DEFAULT_FPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    pub fps: f32,
    pub sample_rate: u32,
    /// Fraction of sequences (rounded) that carry a planted salient spike.
    pub salient_fraction: f64,
    pub speaker: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_sequences: 200,
            frames_per_sequence: 64,
            fps: DEFAULT_FPS,
            sample_rate: DEFAULT_SAMPLE_RATE,
            salient_fraction: 0.3,
            speaker: "spk0".into(),
        }
    }
}

// Generator constants (normalized image units unless noted).
const CARRIER_GAIN: f64 = 0.04;
const CLICK_GAIN: f64 = 1.0;
const CLICK_HZ: f64 = 3000.0;
const CLICK_DECAY_S: f64 = 0.01;
const CLICK_LEN_S: f64 = 0.06;
const SPIKE_GAIN: f64 = 5.0;
const ARM_GAIN: f64 = 0.008;
const LIP_GAIN: f64 = 0.015;
const HAND_SWING: f64 = 0.8;
const ENERGY_SMOOTHING: usize = 2;
/// Spike profile level at or above which a frame counts as salient.
pub const MASK_LEVEL: f64 = 0.5;

/// Ground truth written alongside each synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOracle {
    pub salient: bool,
    /// Low-passed energy driving the arms, per frame.
    pub energy: Vec<f32>,
    /// Instantaneous amplitude envelope driving the lips, per frame.
    pub envelope: Vec<f32>,
    pub mask: Vec<u8>,
    /// Click times (seconds).
    pub audio_beats: Vec<f64>,
    /// Hand turnaround times (seconds).
    pub motion_beats: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub id: String,
    pub split: Split,
    pub waveform: Waveform,
    pub pose: Array3<f32>,
    pub oracle: SynthOracle,
}

struct Phrase {
    start: usize,
    end: usize,
    period: usize,
}

fn ramp(x: f64) -> f64 {
    0.5 * (1.0 - (PI * x.clamp(0.0, 1.0)).cos())
}

struct Envelope {
    phrases: Vec<(f64, f64)>,
    syllable_hz: f64,
    phase: f64,
    spike: Option<(f64, f64)>,
    fps: f64,
}

impl Envelope {
    /// Spike profile at time `tau` (in frames).
    fn spike(&self, tau: f64) -> f64 {
        match self.spike {
            Some((c, w)) if (tau - c).abs() < w => 0.5 * (1.0 + (PI * (tau - c) / w).cos()),
            _ => 0.0,
        }
    }

    fn at(&self, tau: f64) -> f64 {
        let level =
            0.65 + 0.35 * (2.0 * PI * self.syllable_hz * tau / self.fps + self.phase).sin();
        let speech: f64 = self
            .phrases
            .iter()
            .map(|&(a, b)| ramp((tau - a) / 2.0) * ramp((b - tau) / 2.0))
            .sum();
        speech * level + SPIKE_GAIN * self.spike(tau)
    }
}

pub fn split_for_index(i: usize) -> Split {
    match i % 10 {
        8 => Split::Val,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Indices of sequences carrying a planted spike.
pub fn salient_schedule(cfg: &SynthConfig) -> Vec<bool> {
    let n_salient = (cfg.salient_fraction * cfg.n_sequences as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_sequences).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let mut salient = vec![false; cfg.n_sequences];
    for &i in order.iter().take(n_salient) {
        salient[i] = true;
    }
    salient
}

fn plan_phrases(rng: &mut ChaCha8Rng, frames: usize) -> Vec<Phrase> {
    let mut phrases = Vec::new();
    let mut cursor = rng.random_range(3..=8);
    loop {
        let period = rng.random_range(7..=9);
        let mut beats = if rng.random_bool(0.5) { 4 } else { 2 };
        if cursor + beats * period + 1 > frames {
            beats = 2;
        }
        if cursor + beats * period + 1 > frames {
            break;
        }
        phrases.push(Phrase {
            start: cursor,
            end: cursor + beats * period,
            period,
        });
        cursor += beats * period + rng.random_range(4..=9);
    }
    phrases
}

/// Rest posture of the default 121-point layout, `121 x 2`.
pub fn resting_posture() -> Array3<f32> {
    let mut p = Array3::<f32>::zeros((1, 121, 2));
    let mut set = |j: usize, x: f64, y: f64| {
        p[[0, j, 0]] = x as f32;
        p[[0, j, 1]] = y as f32;
    };
    use body::*;
    let joints = [
        (NECK, 0.50, 0.35),
        (NOSE, 0.50, 0.20),
        (R_SHOULDER, 0.40, 0.37),
        (R_ELBOW, 0.36, 0.52),
        (R_WRIST, 0.40, 0.65),
        (L_SHOULDER, 0.60, 0.37),
        (L_ELBOW, 0.64, 0.52),
        (L_WRIST, 0.60, 0.65),
        (MID_HIP, 0.50, 0.72),
    ];
    for (j, x, y) in joints {
        set(j, x, y);
    }
    for (hand, wrist_x, mirror) in [(R_HAND, 0.40, 1.0), (L_HAND, 0.60, -1.0)] {
        let (hx, hy) = (wrist_x, 0.655);
        set(hand, hx, hy);
        for finger in 0..5 {
            let angle = PI / 2.0 + mirror * (finger as f64 - 2.0) * 0.25;
            for (k, r) in [0.012, 0.020, 0.027, 0.033].iter().enumerate() {
                set(hand + 1 + 4 * finger + k, hx + r * angle.cos(), hy + r * angle.sin());
            }
        }
    }
    // Face: landmarks on a small oval centred under the nose.
    let (cx, cy, sc) = (0.50, 0.22, 0.05);
    let f0 = body::COUNT;
    for k in 0..17 {
        let a = PI * (k as f64 / 16.0);
        set(f0 + k, cx - sc * a.cos(), cy + 0.6 * sc * a.sin());
    }
    for k in 0..10 {
        let side = if k < 5 { -1.0 } else { 1.0 };
        let u = (k % 5) as f64 / 4.0;
        set(f0 + 17 + k, cx + side * sc * (0.15 + 0.6 * u), cy - 0.7 * sc - 0.1 * sc * (PI * u).sin());
    }
    for k in 0..9 {
        let (x, y) = if k < 4 {
            (cx, cy - 0.5 * sc + 0.15 * sc * k as f64)
        } else {
            (cx + 0.1 * sc * (k as f64 - 6.0), cy + 0.15 * sc)
        };
        set(f0 + 27 + k, x, y);
    }
    for k in 0..12 {
        let side = if k < 6 { -1.0 } else { 1.0 };
        let a = 2.0 * PI * (k % 6) as f64 / 6.0;
        set(f0 + 36 + k, cx + side * 0.45 * sc + 0.15 * sc * a.cos(), cy - 0.4 * sc + 0.07 * sc * a.sin());
    }
    for k in 0..12 {
        let a = 2.0 * PI * k as f64 / 12.0;
        set(f0 + 48 + k, cx - 0.4 * sc * a.cos(), cy + 0.4 * sc + 0.12 * sc * a.sin());
    }
    for k in 0..8 {
        let a = 2.0 * PI * k as f64 / 8.0;
        set(f0 + 60 + k, cx - 0.25 * sc * a.cos(), cy + 0.4 * sc + 0.05 * sc * a.sin());
    }
    set(f0 + 68, cx - 0.45 * sc, cy - 0.4 * sc);
    set(f0 + 69, cx + 0.45 * sc, cy - 0.4 * sc);
    p
}

fn lower_lip_points() -> Vec<usize> {
    let f0 = body::COUNT;
    (55..=59).chain(65..=67).map(|k| f0 + k).collect()
}

/// Generates one sequence in memory.
pub fn synthesize_sequence(cfg: &SynthConfig, index: usize, salient: bool) -> SynthSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let frames = cfg.frames_per_sequence;
    let fps = cfg.fps as f64;
    let sr = cfg.sample_rate as f64;

    let phrases = plan_phrases(&mut rng, frames);
    let spike = salient.then(|| {
        let w: f64 = rng.random_range(4.0..6.0);
        let lo = w.min(frames as f64 / 2.0);
        let hi = (frames as f64 - 1.0 - w).max(lo + 1e-9);
        (rng.random_range(lo..hi), w)
    });
    let env = Envelope {
        phrases: phrases.iter().map(|p| (p.start as f64, p.end as f64)).collect(),
        syllable_hz: rng.random_range(3.0..5.0),
        phase: rng.random_range(0.0..2.0 * PI),
        spike,
        fps,
    };
    let f0_hz = rng.random_range(110.0..220.0);

    // Beat grid: every phrase beat gets a click; the interior ones are hand turnarounds.
    let mut audio_beat_frames = Vec::new();
    let mut motion_beat_frames = Vec::new();
    for p in &phrases {
        let n_beats = (p.end - p.start) / p.period;
        for k in 0..=n_beats {
            let b = p.start + k * p.period;
            audio_beat_frames.push(b);
            if k > 0 && k < n_beats {
                motion_beat_frames.push(b);
            }
        }
    }

    // Audio.
    let n_samples = (frames as f64 * sr / fps).round() as usize;
    let mut samples: Vec<f32> = (0..n_samples)
        .map(|n| {
            let t = n as f64 / sr;
            let carrier = (2.0 * PI * f0_hz * t).sin() + 0.5 * (4.0 * PI * f0_hz * t).sin();
            (CARRIER_GAIN * env.at(t * fps) * carrier) as f32
        })
        .collect();
    let click_len = (CLICK_LEN_S * sr) as usize;
    for &b in &audio_beat_frames {
        let start = (b as f64 * sr / fps).round() as usize;
        for m in 0..click_len {
            if let Some(s) = samples.get_mut(start + m) {
                let t = m as f64 / sr;
                *s += (CLICK_GAIN * (-t / CLICK_DECAY_S).exp() * (2.0 * PI * CLICK_HZ * t).sin()) as f32;
            }
        }
    }

    // Per-frame drives.
    let envelope: Vec<f64> = (0..frames).map(|f| env.at(f as f64)).collect();
    let energy: Vec<f64> = (0..frames)
        .map(|f| {
            let lo = f.saturating_sub(ENERGY_SMOOTHING);
            let hi = (f + ENERGY_SMOOTHING).min(frames - 1);
            (lo..=hi).map(|g| envelope[g] * envelope[g]).sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mask: Vec<u8> = (0..frames)
        .map(|f| (env.spike(f as f64) >= MASK_LEVEL) as u8)
        .collect();
    let swing: Vec<f64> = (0..frames)
        .map(|f| {
            phrases
                .iter()
                .find(|p| f >= p.start && f <= p.end)
                .map(|p| {
                    let k = (f - p.start) / p.period;
                    let u = ((f - p.start) % p.period) as f64 / p.period as f64;
                    let rising = 0.5 * (1.0 - (PI * u).cos());
                    HAND_SWING * if k % 2 == 0 { rising } else { 1.0 - rising }
                })
                .unwrap_or(0.0)
        })
        .collect();

    // Pose.
    let rest = resting_posture();
    let mut pose = Array3::<f32>::zeros((frames, 121, 2));
    let lips = lower_lip_points();
    for f in 0..frames {
        pose.slice_mut(ndarray::s![f, .., ..]).assign(&rest.slice(ndarray::s![0, .., ..]));
        let lift = ARM_GAIN * energy[f];
        for (elbow, wrist, hand, out_x, sign) in [
            (body::R_ELBOW, body::R_WRIST, body::R_HAND, -0.45, 1.0),
            (body::L_ELBOW, body::L_WRIST, body::L_HAND, 0.45, -1.0),
        ] {
            let (dx, dy) = (out_x * lift, -lift);
            let (hx, hy) = (rest[[0, hand, 0]] as f64, rest[[0, hand, 1]] as f64);
            let theta = sign * swing[f];
            let (c, s) = (theta.cos(), theta.sin());
            for j in hand..hand + body::HAND_POINTS {
                let (x, y) = (rest[[0, j, 0]] as f64 - hx, rest[[0, j, 1]] as f64 - hy);
                pose[[f, j, 0]] = (hx + c * x - s * y + dx) as f32;
                pose[[f, j, 1]] = (hy + s * x + c * y + dy) as f32;
            }
            for j in [elbow, wrist] {
                pose[[f, j, 0]] += dx as f32;
                pose[[f, j, 1]] += dy as f32;
            }
        }
        let open = (LIP_GAIN * envelope[f]) as f32;
        for &j in &lips {
            pose[[f, j, 1]] += open;
        }
    }

    let to_secs = |v: Vec<usize>| v.into_iter().map(|b| b as f64 / fps).collect();
    SynthSequence {
        id: format!("seq_{index:04}"),
        split: split_for_index(index),
        waveform: Waveform {
            samples,
            sample_rate: cfg.sample_rate,
        },
        pose,
        oracle: SynthOracle {
            salient,
            energy: energy.iter().map(|&v| v as f32).collect(),
            envelope: envelope.iter().map(|&v| v as f32).collect(),
            mask,
            audio_beats: to_secs(audio_beat_frames),
            motion_beats: to_secs(motion_beat_frames),
        },
    }
}

/// Lip opening (lower minus upper inner lip y) per frame of a `T x J x 2` track.
pub fn lip_aperture(pose: &Array3<f32>, layout: &SkeletonLayout) -> Option<Vec<f32>> {
    let (top, bottom) = layout.lips()?;
    Some(
        pose.outer_iter()
            .map(|f| f[[bottom, 1]] - f[[top, 1]])
            .collect(),
    )
}

/// Mean displacement of elbows and wrists from the rest pose.
pub fn arm_displacement(pose: &Array3<f32>) -> Vec<f32> {
    let rest = resting_posture();
    let joints = [body::R_ELBOW, body::R_WRIST, body::L_ELBOW, body::L_WRIST];
    pose.outer_iter()
        .map(|f| {
            joints
                .iter()
                .map(|&j| {
                    let dx = f[[j, 0]] - rest[[0, j, 0]];
                    let dy = f[[j, 1]] - rest[[0, j, 1]];
                    (dx * dx + dy * dy).sqrt()
                })
                .sum::<f32>()
                / joints.len() as f32
        })
        .collect()
}

/// Writes the corpus (WAV, GPOS1, oracle files, manifest) into `out_dir`.
pub fn make_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<CorpusManifest> {
    if cfg.n_sequences == 0 {
        return Err(Error::Argument("synthetic corpus needs at least one sequence".into()));
    }
    if cfg.frames_per_sequence < 4 {
        return Err(Error::Argument("synthetic sequences need at least 4 frames".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let layout = Arc::new(SkeletonLayout::openpose_121());
    let schedule = salient_schedule(cfg);
    let mut entries = Vec::with_capacity(cfg.n_sequences);
    for (i, &salient) in schedule.iter().enumerate() {
        let seq = synthesize_sequence(cfg, i, salient);
        let wav = format!("{}.wav", seq.id);
        let gpos = format!("{}.gpos", seq.id);
        write_wav(&out_dir.join(&wav), &seq.waveform)?;
        write_gpos(&out_dir.join(&gpos), seq.pose.view())?;
        write_bytes(&out_dir.join(format!("{}.mask", seq.id)), &seq.oracle.mask)?;
        write_times(&out_dir.join(format!("{}.beats", seq.id)), &seq.oracle.audio_beats)?;
        write_times(
            &out_dir.join(format!("{}.motion_beats", seq.id)),
            &seq.oracle.motion_beats,
        )?;
        let oracle = serde_json::to_string(&seq.oracle).expect("oracle serializes");
        write_bytes(&out_dir.join(format!("{}.oracle.json", seq.id)), oracle.as_bytes())?;
        entries.push(ManifestEntry {
            audio: wav,
            pose: gpos,
            speaker: cfg.speaker.clone(),
            split: seq.split,
            asr: None,
        });
    }
    let manifest = CorpusManifest {
        root: out_dir.to_path_buf(),
        layout,
        samples: entries,
    };
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Reads back the ground truth written for a pose file of a synthetic corpus.
pub fn read_oracle(corpus_dir: &Path, pose_file: &str) -> Result<SynthOracle> {
    let stem = Path::new(pose_file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let path = corpus_dir.join(format!("{stem}.oracle.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_times(path: &Path, times: &[f64]) -> Result<()> {
    let text: String = times.iter().map(|t| format!("{t:.6}\n")).collect();
    write_bytes(path, text.as_bytes())
}
