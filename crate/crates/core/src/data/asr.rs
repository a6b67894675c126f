//! Pluggable frame-aligned ASR feature tracks.
//!
//! The body audio path concatenates these features onto the mel encoding when
//! they are available. No recognizer ships with the toolkit: features either
//! come from precomputed files or from a caller-supplied extractor.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::audio::resample_frames;
use crate::error::{Error, Result};

pub const DEFAULT_ASR_DIM: usize = 29;

pub trait AsrProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Features for the whole waveform at the provider's native frame rate,
    /// or `None` when the provider has nothing to offer.
    fn raw_features(&self, waveform: &[f32], sample_rate: u32) -> Result<Option<Array2<f32>>>;
}

/// Produces no features; the body path runs on mel only.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullAsr;

impl AsrProvider for NullAsr {
    fn name(&self) -> &str {
        "null"
    }

    fn raw_features(&self, _: &[f32], _: u32) -> Result<Option<Array2<f32>>> {
        Ok(None)
    }
}

/// Loads precomputed features from a CSV file, one frame per line.
#[derive(Debug, Clone)]
pub struct FileAsr {
    path: PathBuf,
}

impl FileAsr {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AsrProvider for FileAsr {
    fn name(&self) -> &str {
        "file"
    }

    fn raw_features(&self, _: &[f32], _: u32) -> Result<Option<Array2<f32>>> {
        let text = std::fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let ctx = self.path.display().to_string();
        let mut rows: Vec<Vec<f32>> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::schema(&ctx, format!("line {}: {e}", i + 1)))?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::schema(&ctx, format!("line {} has a different width", i + 1)));
                }
            }
            rows.push(row);
        }
        let d = rows.first().map(Vec::len).ok_or_else(|| Error::schema(&ctx, "no feature rows"))?;
        let t = rows.len();
        let arr = Array2::from_shape_vec((t, d), rows.concat())
            .map_err(|e| Error::schema(&ctx, e.to_string()))?;
        Ok(Some(arr))
    }
}

type Extractor = dyn Fn(&[f32], u32) -> std::result::Result<Array2<f32>, String> + Send + Sync;

/// Wraps a user-supplied extractor closure.
pub struct ExternalAsr {
    name: String,
    extractor: Box<Extractor>,
}

impl ExternalAsr {
    pub fn new<F>(name: impl Into<String>, extractor: F) -> Self
    where
        F: Fn(&[f32], u32) -> std::result::Result<Array2<f32>, String> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            extractor: Box::new(extractor),
        }
    }
}

impl AsrProvider for ExternalAsr {
    fn name(&self) -> &str {
        &self.name
    }

    fn raw_features(&self, waveform: &[f32], sample_rate: u32) -> Result<Option<Array2<f32>>> {
        (self.extractor)(waveform, sample_rate)
            .map(Some)
            .map_err(|message| Error::Provider {
                provider: self.name.clone(),
                message,
            })
    }
}

/// Provider features resampled to `target_frames` rows.
pub fn asr_features(
    waveform: &[f32],
    sample_rate: u32,
    target_frames: usize,
    provider: &dyn AsrProvider,
) -> Result<Option<Array2<f32>>> {
    let Some(raw) = provider.raw_features(waveform, sample_rate)? else {
        return Ok(None);
    };
    let fail = |message: String| Error::Provider {
        provider: provider.name().to_string(),
        message,
    };
    if raw.nrows() == 0 || raw.ncols() == 0 {
        return Err(fail("returned an empty feature matrix".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(fail("returned non-finite features".into()));
    }
    Ok(Some(resample_frames(raw.view(), target_frames)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_provider_is_absent() {
        assert!(asr_features(&[0.0; 10], 16_000, 4, &NullAsr).unwrap().is_none());
    }

    #[test]
    fn file_provider_resamples_to_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let rows: Vec<String> = (0..128)
            .map(|t| (0..29).map(|d| format!("{}", t * 29 + d)).collect::<Vec<_>>().join(","))
            .collect();
        std::fs::write(&path, rows.join("\n")).unwrap();
        let feats = asr_features(&[], 16_000, 64, &FileAsr::new(&path)).unwrap().unwrap();
        assert_eq!(feats.dim(), (64, 29));
    }

    #[test]
    fn file_provider_missing_file() {
        let err = asr_features(&[], 16_000, 64, &FileAsr::new("/nonexistent/asr.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn external_failure_names_provider() {
        let provider = ExternalAsr::new("deepspeech-bridge", |_, _| Err("model not loaded".into()));
        let err = asr_features(&[0.0], 16_000, 4, &provider).unwrap_err();
        assert!(err.to_string().contains("deepspeech-bridge"));
        assert!(matches!(err, Error::Provider { .. }));
    }
}
