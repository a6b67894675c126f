//! Corpus manifests, segmentation into fixed-length training samples, and
//! the in-memory dataset built from them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::asr::{asr_features, AsrProvider, FileAsr, NullAsr};
use super::audio::{extract_mel, read_wav, MelConfig, Waveform};
use super::layout::SkeletonLayout;
use super::pose::{read_pose_array, PoseSequence, DEFAULT_FPS};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Mel features plus the optional ASR track, both `T` frames long.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechFeatureSet {
    mel: Array2<f32>,
    asr: Option<Array2<f32>>,
    sample_rate: u32,
}

impl SpeechFeatureSet {
    pub fn new(mel: Array2<f32>, asr: Option<Array2<f32>>, sample_rate: u32) -> Result<Self> {
        if mel.nrows() == 0 {
            return Err(Error::Argument("speech features need at least one frame".into()));
        }
        if let Some(asr) = &asr {
            if asr.nrows() != mel.nrows() {
                return Err(Error::Argument(format!(
                    "mel has {} frames but ASR track has {}",
                    mel.nrows(),
                    asr.nrows()
                )));
            }
        }
        let finite = |a: &Array2<f32>| a.iter().all(|v| v.is_finite());
        if !finite(&mel) || !asr.as_ref().is_none_or(finite) {
            return Err(Error::Argument("speech features must be finite".into()));
        }
        Ok(Self {
            mel,
            asr,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.mel.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mel(&self) -> &Array2<f32> {
        &self.mel
    }

    pub fn asr(&self) -> Option<&Array2<f32>> {
        self.asr.as_ref()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Computes features for a clip of `frames` pose frames.
    pub fn from_waveform(
        wave: &Waveform,
        frames: usize,
        mel_cfg: &MelConfig,
        provider: &dyn AsrProvider,
    ) -> Result<Self> {
        let mel = extract_mel(&wave.samples, wave.sample_rate, frames, mel_cfg)?;
        let asr = asr_features(&wave.samples, wave.sample_rate, frames, provider)?;
        Self::new(mel, asr, wave.sample_rate)
    }
}

/// One aligned training unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSample {
    pub audio: SpeechFeatureSet,
    /// Raw audio for this segment, spanning exactly `T / fps` seconds.
    pub waveform: Vec<f32>,
    pub pose: PoseSequence,
    pub speaker_id: String,
    pub segment_id: String,
}

impl GestureSample {
    pub fn len(&self) -> usize {
        self.pose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pose.is_empty()
    }
}

/// Cuts a long recording into consecutive non-overlapping windows.
///
/// The trailing remainder shorter than `window` is dropped; recordings
/// shorter than one window yield no samples. `asr`, when given, must already
/// be aligned to the pose frames.
#[allow(clippy::too_many_arguments)]
pub fn segment_clips(
    pose: &PoseSequence,
    audio: &Waveform,
    window: usize,
    asr: Option<&Array2<f32>>,
    mel_cfg: &MelConfig,
    speaker_id: &str,
    sequence_id: &str,
) -> Result<Vec<GestureSample>> {
    if window == 0 {
        return Err(Error::Argument("segment window must be positive".into()));
    }
    if let Some(asr) = asr {
        if asr.nrows() != pose.len() {
            return Err(Error::Argument(format!(
                "ASR track has {} frames, pose has {}",
                asr.nrows(),
                pose.len()
            )));
        }
    }
    let n_segments = pose.len() / window;
    let sr = audio.sample_rate as f64;
    let fps = pose.fps() as f64;
    let seg_samples = (window as f64 * sr / fps).round() as usize;
    let needed = (n_segments as f64 * window as f64 * sr / fps).round() as usize;
    // Allow rounding slack of one pose frame; pad the tail with silence.
    let frame_samples = (sr / fps).ceil() as usize;
    if n_segments > 0 && audio.samples.len() + frame_samples < needed {
        return Err(Error::Argument(format!(
            "audio has {} samples but {} pose frames need {needed}",
            audio.samples.len(),
            n_segments * window
        )));
    }
    let mut out = Vec::with_capacity(n_segments);
    for k in 0..n_segments {
        let start_frame = k * window;
        let start = (start_frame as f64 * sr / fps).round() as usize;
        let mut samples: Vec<f32> = audio
            .samples
            .iter()
            .skip(start)
            .take(seg_samples)
            .copied()
            .collect();
        samples.resize(seg_samples, 0.0);
        let seg_wave = Waveform {
            samples,
            sample_rate: audio.sample_rate,
        };
        let mel = extract_mel(&seg_wave.samples, seg_wave.sample_rate, window, mel_cfg)?;
        let seg_asr = asr.map(|a| a.slice(s![start_frame..start_frame + window, ..]).to_owned());
        out.push(GestureSample {
            audio: SpeechFeatureSet::new(mel, seg_asr, audio.sample_rate)?,
            waveform: seg_wave.samples,
            pose: pose.slice_frames(start_frame, window)?,
            speaker_id: speaker_id.to_string(),
            segment_id: format!("{sequence_id}#{k}"),
        });
    }
    Ok(out)
}

/// JSON representation of a manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio: String,
    pub pose: String,
    pub speaker: String,
    pub split: Split,
    /// Optional precomputed ASR features (CSV).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    layout: SkeletonLayout,
    samples: Vec<ManifestEntry>,
}

/// A validated corpus description; paths resolve relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub layout: Arc<SkeletonLayout>,
    pub samples: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split_sizes(&self) -> BTreeMap<Split, usize> {
        let mut sizes = BTreeMap::new();
        for s in &self.samples {
            *sizes.entry(s.split).or_insert(0) += 1;
        }
        sizes
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = ManifestFile {
            layout: (*self.layout).clone(),
            samples: self.samples.clone(),
        };
        let json = serde_json::to_string_pretty(&file).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Parses and validates a manifest: every file must exist and parse, and
/// pose shapes must match the layout.
pub fn load_corpus(manifest_path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::schema(manifest_path.display().to_string(), e.to_string()))?;
    let layout = Arc::new(file.layout.resolved()?);
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let manifest = CorpusManifest {
        root,
        layout,
        samples: file.samples,
    };

    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    for (i, entry) in manifest.samples.iter().enumerate() {
        if let Some(prev) = seen.insert(&entry.pose, entry.split) {
            if prev != entry.split {
                return Err(Error::schema(
                    format!("sample {i}"),
                    format!("{} appears in both {prev:?} and {:?}", entry.pose, entry.split),
                ));
            }
        }
        let pose_path = manifest.resolve(&entry.pose);
        let frames = read_pose_array(&pose_path)?;
        let (t, j, c) = frames.dim();
        if j != manifest.layout.total_keypoints() {
            return Err(Error::schema(
                format!("sample {i} ({})", entry.pose),
                format!(
                    "expected shape T x {} x 2, found {t} x {j} x {c}",
                    manifest.layout.total_keypoints()
                ),
            ));
        }
        let audio_path = manifest.resolve(&entry.audio);
        hound::WavReader::open(&audio_path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(&audio_path, io),
            other => Error::Wav {
                path: audio_path.clone(),
                message: other.to_string(),
            },
        })?;
        if let Some(asr) = &entry.asr {
            let p = manifest.resolve(asr);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "ASR feature file missing"),
                ));
            }
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub window: usize,
    pub fps: f32,
    pub mel: MelConfig,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            fps: DEFAULT_FPS,
            mel: MelConfig::default(),
        }
    }
}

/// Segmented samples of a corpus with their split assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: Arc<SkeletonLayout>,
    pub samples: Vec<GestureSample>,
    pub splits: Vec<Split>,
    /// Index of the manifest entry each sample came from.
    pub sources: Vec<usize>,
}

impl Dataset {
    pub fn load(manifest: &CorpusManifest, opts: &DatasetOptions) -> Result<Self> {
        let mut samples = Vec::new();
        let mut splits = Vec::new();
        let mut sources = Vec::new();
        for (i, entry) in manifest.samples.iter().enumerate() {
            let pose = PoseSequence::read(
                &manifest.resolve(&entry.pose),
                opts.fps,
                manifest.layout.clone(),
            )?;
            let wave = read_wav(&manifest.resolve(&entry.audio))?;
            let provider: Box<dyn AsrProvider> = match &entry.asr {
                Some(p) => Box::new(FileAsr::new(manifest.resolve(p))),
                None => Box::new(NullAsr),
            };
            let asr = asr_features(&wave.samples, wave.sample_rate, pose.len(), provider.as_ref())?;
            let id = Path::new(&entry.pose)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("seq{i}"));
            for sample in segment_clips(
                &pose,
                &wave,
                opts.window,
                asr.as_ref(),
                &opts.mel,
                &entry.speaker,
                &id,
            )? {
                samples.push(sample);
                splits.push(entry.split);
                sources.push(i);
            }
        }
        Ok(Self {
            layout: manifest.layout.clone(),
            samples,
            splits,
            sources,
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.samples.iter().map(|x| x.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn pose(t: usize) -> PoseSequence {
        let frames = Array3::from_shape_fn((t, 121, 2), |(a, b, c)| (a * 242 + b * 2 + c) as f32);
        PoseSequence::new(frames, 15.0, Arc::new(SkeletonLayout::default())).unwrap()
    }

    fn wave_for(t: usize) -> Waveform {
        let n = (t as f64 * 16_000.0 / 15.0).round() as usize;
        Waveform {
            samples: (0..n).map(|i| ((i as f32) * 0.05).sin() * 0.1).collect(),
            sample_rate: 16_000,
        }
    }

    fn segment(t: usize) -> Vec<GestureSample> {
        segment_clips(&pose(t), &wave_for(t), 64, None, &MelConfig::default(), "s", "q").unwrap()
    }

    #[test]
    fn segmentation_counts() {
        assert_eq!(segment(200).len(), 3);
        assert_eq!(segment(64).len(), 1);
        assert!(segment(63).is_empty());
    }

    #[test]
    fn segments_tile_the_prefix() {
        let src = pose(200);
        let segs = segment(200);
        for (k, seg) in segs.iter().enumerate() {
            assert_eq!(seg.len(), 64);
            assert_eq!(seg.audio.len(), 64);
            assert_eq!(seg.waveform.len(), (64.0f64 * 16_000.0 / 15.0).round() as usize);
            assert_eq!(
                seg.pose.frames(),
                src.frames().slice(s![k * 64..(k + 1) * 64, .., ..])
            );
        }
    }

    #[test]
    fn short_audio_is_rejected() {
        let mut wave = wave_for(128);
        wave.samples.truncate(wave.samples.len() / 2);
        assert!(segment_clips(&pose(128), &wave, 64, None, &MelConfig::default(), "s", "q").is_err());
    }
}
