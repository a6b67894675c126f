use std::collections::BTreeMap;
use std::path::Path;

use gesture_core::data::layout::SkeletonLayout;
use gesture_core::data::synth::{read_oracle, salient_schedule, synthesize_sequence, SynthConfig};
use gesture_core::data::{make_synthetic_corpus, Dataset, DatasetOptions, Split};
use gesture_core::eval::beats::{extract_audio_beats, extract_motion_beats, OnsetConfig};
use gesture_core::saliency::{fit_speaker_saliency, label_dataset};

fn digest(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Targets without a detected event within `tol` seconds.
fn unmatched(targets: &[f64], found: &[f64], tol: f64) -> usize {
    targets
        .iter()
        .filter(|t| !found.iter().any(|f| (*t - f).abs() <= tol + 1e-9))
        .count()
}

#[test]
fn derived_labels_match_planted_saliency() {
    let cfg = SynthConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_corpus(&cfg, dir.path()).unwrap();
    let ds = Dataset::load(&manifest, &DatasetOptions::default()).unwrap();
    assert_eq!(ds.samples.len(), 200);
    let labels = label_dataset(&ds, &fit_speaker_saliency(&ds, Split::Train).unwrap()).unwrap();
    let mut salient = 0;
    for (i, l) in labels.iter().enumerate() {
        let oracle = read_oracle(dir.path(), &manifest.samples[ds.sources[i]].pose).unwrap();
        assert_eq!(l.label == 1, oracle.salient, "sequence {i}");
        salient += oracle.salient as usize;
    }
    assert_eq!(salient, salient_schedule(&cfg).iter().filter(|&&s| s).count());
}

#[test]
fn planted_beats_are_recovered_within_one_frame() {
    let cfg = SynthConfig { n_sequences: 60, ..SynthConfig::default() };
    let layout = SkeletonLayout::openpose_121();
    let bones = layout.body_bones();
    let frame = 1.0 / cfg.fps as f64;
    let schedule = salient_schedule(&cfg);
    for (i, &salient) in schedule.iter().enumerate() {
        let seq = synthesize_sequence(&cfg, i, salient);
        let audio = extract_audio_beats(&seq.waveform.samples, seq.waveform.sample_rate, &OnsetConfig::default());
        assert_eq!(unmatched(&seq.oracle.audio_beats, &audio, frame), 0, "audio beats of {i}: {audio:?}");
        let body = seq.pose.select(ndarray::Axis(1), layout.body_indices());
        let motion = extract_motion_beats(body.view(), &bones, cfg.fps);
        assert_eq!(unmatched(&seq.oracle.motion_beats, &motion, frame), 0, "motion beats of {i}: {motion:?}");
    }
}

#[test]
fn corpus_is_byte_identical_per_seed() {
    let cfg = SynthConfig { n_sequences: 12, ..SynthConfig::default() };
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    make_synthetic_corpus(&cfg, a.path()).unwrap();
    make_synthetic_corpus(&cfg, b.path()).unwrap();
    make_synthetic_corpus(&SynthConfig { seed: cfg.seed + 1, ..cfg.clone() }, c.path()).unwrap();
    assert_eq!(digest(a.path()), digest(b.path()));
    assert_ne!(digest(a.path()), digest(c.path()));
}

#[test]
fn every_split_is_populated() {
    let cfg = SynthConfig { n_sequences: 20, ..SynthConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_corpus(&cfg, dir.path()).unwrap();
    let sizes = manifest.split_sizes();
    for split in [Split::Train, Split::Val, Split::Test] {
        assert!(sizes.get(&split).copied().unwrap_or(0) > 0, "{split:?} is empty");
    }
    assert!(make_synthetic_corpus(&SynthConfig { n_sequences: 0, ..cfg }, dir.path()).is_err());
}
