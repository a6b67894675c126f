//! Metric report assembly and rendering.

use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use super::beats::{beat_consistency, extract_audio_beats, extract_motion_beats, OnsetConfig, DEFAULT_BC_SIGMA};
use super::fgd::{fgd, PoseFeatureExtractor};
use super::metrics::l2_metric;
use super::syncnet::{psd, SyncEmbedder};
use crate::data::{GestureSample, PoseSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub l2: f64,
    /// Absent when no feature extractor was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fgd: Option<f64>,
    pub bc: f64,
    /// Absent when no sync network was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd: Option<f64>,
    pub n_samples: usize,
    pub config_echo: serde_json::Value,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [("l2", Some(self.l2)), ("fgd", self.fgd), ("bc", Some(self.bc)), ("psd", self.psd)];
        if let Some((name, Some(v))) = vals.iter().find(|(_, v)| v.is_some_and(|v| !v.is_finite() || v < 0.0)) {
            return Err(Error::Argument(format!("metric {name} = {v} is not a finite non-negative value")));
        }
        if self.bc > 1.0 {
            return Err(Error::Argument(format!("beat consistency {} exceeds 1", self.bc)));
        }
        Ok(())
    }

    /// Plain-text table, one metric per row.
    pub fn to_table(&self) -> String {
        let rows = [
            ("L2 dist. (lower is better)", Some(self.l2)),
            ("FGD (lower is better)", self.fgd),
            ("BC (higher is better)", Some(self.bc)),
            ("PSD (lower is better)", self.psd),
        ];
        let mut out = format!("{:<28} {:>12}\n", "metric", "value");
        for (name, v) in rows {
            match v {
                Some(v) => out.push_str(&format!("{name:<28} {v:>12.6}\n")),
                None => out.push_str(&format!("{name:<28} {:>12}\n", "n/a")),
            }
        }
        out.push_str(&format!("{:<28} {:>12}\n", "samples", self.n_samples));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub bc_sigma: f64,
    pub onsets: OnsetConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bc_sigma: DEFAULT_BC_SIGMA,
            onsets: OnsetConfig::default(),
        }
    }
}

/// Scores generated sequences against the reference samples they were
/// generated for. BC is averaged over sequences that contain audio beats.
pub fn evaluate(
    generated: &[PoseSequence],
    reference: &[&GestureSample],
    extractor: Option<&PoseFeatureExtractor>,
    syncnet: Option<&dyn SyncEmbedder>,
    opts: &EvalOptions,
    config_echo: serde_json::Value,
) -> Result<MetricReport> {
    if generated.len() != reference.len() || generated.is_empty() {
        return Err(Error::Argument(format!(
            "{} generated sequences for {} references",
            generated.len(),
            reference.len()
        )));
    }
    let gen_views: Vec<ArrayView3<'_, f32>> = generated.iter().map(|g| g.frames()).collect();
    let ref_views: Vec<ArrayView3<'_, f32>> = reference.iter().map(|r| r.pose.frames()).collect();
    let l2 = l2_metric(&gen_views, &ref_views)?;

    let gen_bodies: Vec<_> = generated.iter().map(PoseSequence::body).collect();
    let ref_bodies: Vec<_> = reference.iter().map(|r| r.pose.body()).collect();
    let fgd = match extractor {
        Some(ex) => {
            let f_real = ex.features(&ref_bodies.iter().map(|b| b.view()).collect::<Vec<_>>())?;
            let f_gen = ex.features(&gen_bodies.iter().map(|b| b.view()).collect::<Vec<_>>())?;
            Some(fgd(f_real.view(), f_gen.view())?)
        }
        None => {
            log::warn!("no feature extractor given; FGD omitted");
            None
        }
    };
    if syncnet.is_none() {
        log::warn!("no sync network given; PSD omitted");
    }

    let (mut bc_sum, mut bc_n) = (0.0, 0usize);
    let mut psd_sum = 0.0;
    for ((g, body), r) in generated.iter().zip(&gen_bodies).zip(reference) {
        let audio = extract_audio_beats(&r.waveform, r.audio.sample_rate(), &opts.onsets);
        if !audio.is_empty() {
            let bones = g.layout().body_bones();
            let motion = extract_motion_beats(body.view(), &bones, g.fps());
            bc_sum += beat_consistency(&audio, &motion, opts.bc_sigma)?;
            bc_n += 1;
        }
        if let Some(net) = syncnet {
            psd_sum += psd(g.frames(), r.audio.mel().view(), net)?;
        }
    }
    let bc = if bc_n == 0 {
        log::warn!("no reference sequence has audio beats; reporting BC = 0");
        0.0
    } else {
        bc_sum / bc_n as f64
    };
    let report = MetricReport {
        l2,
        fgd,
        bc,
        psd: syncnet.map(|_| psd_sum / generated.len() as f64),
        n_samples: generated.len(),
        config_echo,
    };
    report.validate()?;
    Ok(report)
}
