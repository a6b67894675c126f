use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gesture_core::config::RunConfig;
use gesture_core::data::synth::read_oracle;
use gesture_core::data::{
    load_corpus, make_synthetic_corpus, read_wav, CorpusManifest, Dataset, FileAsr, GestureSample, NullAsr,
    SpeechFeatureSet, Split,
};
use gesture_core::data::asr::AsrProvider;
use gesture_core::eval::{auroc, evaluate, EvalOptions, PoseFeatureExtractor, PoseSyncNet, SyncEmbedder};
use gesture_core::nn::Checkpoint;
use gesture_core::saliency::{fit_speaker_saliency, label_dataset, SaliencyModel};
use gesture_core::training::{train, TrainRequest, TrainedModel};
use gesture_core::{Error, Result};
use serde_json::{json, Value};

use crate::{
    AuxTrainArgs, Cli, Command, DeriveLabelsArgs, DetectArgs, EvaluateArgs, GenerateArgs, SynthArgs, TrainArgs,
    TrainDetectorArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match cli.command {
        Command::SynthData(a) => synth_data(cfg, a),
        Command::DeriveLabels(a) => derive_labels(cfg, a),
        Command::TrainDetector(a) => train_detector(cfg, a),
        Command::Detect(a) => detect(cfg, a),
        Command::Train(a) => train_model(cfg, a),
        Command::Generate(a) => generate(cfg, a),
        Command::TrainSyncnet(a) => train_syncnet(cfg, a),
        Command::TrainFgdExtractor(a) => train_fgd_extractor(cfg, a),
        Command::Evaluate(a) => evaluate_cmd(cfg, a),
    }
}

fn finish(cfg: RunConfig) -> Result<RunConfig> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes") + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let text: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes a checkpoint with the run configuration added to its header.
fn write_checkpoint(mut ckpt: Checkpoint, cfg: &RunConfig, path: &Path) -> Result<()> {
    if let Value::Object(map) = &mut ckpt.header {
        map.insert("run_config".into(), cfg.echo());
    }
    ckpt.write(path)
}

fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join("manifest.json")
    } else {
        corpus.to_path_buf()
    }
}

fn load_dataset(cfg: &RunConfig, corpus: &Path) -> Result<(CorpusManifest, Dataset)> {
    let manifest = load_corpus(&manifest_path(corpus))?;
    let dataset = Dataset::load(&manifest, &cfg.data.dataset_options())?;
    if dataset.samples.is_empty() {
        return Err(Error::Argument(format!(
            "corpus {} yields no samples of {} frames",
            corpus.display(),
            cfg.data.window
        )));
    }
    log::info!(
        "loaded {} samples from {} recordings ({} speakers)",
        dataset.samples.len(),
        manifest.samples.len(),
        dataset.speakers().len()
    );
    Ok((manifest, dataset))
}

fn split_samples(ds: &Dataset, split: Split) -> Vec<&GestureSample> {
    ds.indices(split).into_iter().map(|i| &ds.samples[i]).collect()
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn synth_data(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if let Some(n) = a.n {
        cfg.synth.n_sequences = n;
    }
    if let Some(f) = a.frames {
        cfg.synth.frames_per_sequence = f;
    }
    let cfg = finish(cfg)?;
    if cfg.synth.n_sequences == 0 {
        return Err(Error::Argument("--n must be at least 1".into()));
    }
    let manifest = make_synthetic_corpus(&cfg.synth, &a.out)?;
    write_json(&a.out.join("run_config.json"), &cfg.echo())?;
    let sizes: BTreeMap<&str, usize> = manifest
        .split_sizes()
        .into_iter()
        .map(|(s, n)| (split_name(s), n))
        .collect();
    println!("wrote {} sequences to {} {:?}", manifest.samples.len(), a.out.display(), sizes);
    Ok(())
}

fn derive_labels(cfg: RunConfig, a: DeriveLabelsArgs) -> Result<()> {
    let cfg = finish(cfg)?;
    let (_, ds) = load_dataset(&cfg, &a.corpus)?;
    let fits = fit_speaker_saliency(&ds, Split::Train)?;
    let labels = label_dataset(&ds, &fits)?;
    let rows: Vec<Value> = ds
        .samples
        .iter()
        .zip(&labels)
        .zip(&ds.splits)
        .map(|((s, l), split)| {
            json!({
                "segment": s.segment_id,
                "speaker": s.speaker_id,
                "split": split,
                "label": l.label,
                "threshold": l.threshold,
                "max_distance": l.distances.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect();
    let positives = labels.iter().filter(|l| l.label == 1).count();
    write_json(&a.out, &json!({ "config": cfg.echo(), "labels": rows }))?;
    println!("{positives} of {} sequences labelled salient", labels.len());
    Ok(())
}

/// Start frame of each sample within its source recording.
fn segment_offsets(ds: &Dataset) -> Vec<usize> {
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    ds.sources
        .iter()
        .zip(&ds.samples)
        .map(|(&src, s)| {
            let start = next.entry(src).or_insert(0);
            let offset = *start;
            *start += s.len();
            offset
        })
        .collect()
}

/// Frame AUROC against planted masks when the corpus carries oracle files,
/// otherwise sequence AUROC of the peak score against the weak labels.
fn detector_auroc(
    manifest: &CorpusManifest,
    ds: &Dataset,
    scores: &[Vec<f32>],
    labels: &[u8],
) -> Result<BTreeMap<String, f64>> {
    let offsets = segment_offsets(ds);
    let mut out = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let idx = ds.indices(split);
        if idx.is_empty() {
            continue;
        }
        let mut frame: Option<(Vec<f64>, Vec<bool>)> = Some((Vec::new(), Vec::new()));
        for &i in &idx {
            let Some((s, m)) = frame.as_mut() else { break };
            match read_oracle(&manifest.root, &manifest.samples[ds.sources[i]].pose) {
                Ok(o) => {
                    let mask = &o.mask[offsets[i]..offsets[i] + scores[i].len()];
                    s.extend(scores[i].iter().map(|&v| v as f64));
                    m.extend(mask.iter().map(|&b| b == 1));
                }
                Err(_) => frame = None,
            }
        }
        let name = split_name(split);
        let result = match frame {
            Some((s, m)) => auroc(&s, &m).map(|v| (format!("{name}_frame_auroc"), v)),
            None => {
                let peak: Vec<f64> = idx
                    .iter()
                    .map(|&i| scores[i].iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64)
                    .collect();
                let l: Vec<bool> = idx.iter().map(|&i| labels[i] == 1).collect();
                auroc(&peak, &l).map(|v| (format!("{name}_sequence_auroc"), v))
            }
        };
        match result {
            Ok((k, v)) => {
                out.insert(k, v);
            }
            Err(e) => log::warn!("{name} AUROC unavailable: {e}"),
        }
    }
    Ok(out)
}

fn train_detector(mut cfg: RunConfig, a: TrainDetectorArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.detector.epochs = e;
    }
    let cfg = finish(cfg)?;
    let (manifest, ds) = load_dataset(&cfg, &a.corpus)?;
    create_dir(&a.out)?;
    let fits = fit_speaker_saliency(&ds, Split::Train)?;
    let labels: Vec<u8> = label_dataset(&ds, &fits)?.iter().map(|l| l.label).collect();
    let train_idx = ds.indices(Split::Train);
    let samples: Vec<&GestureSample> = train_idx.iter().map(|&i| &ds.samples[i]).collect();
    let train_labels: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
    log::info!(
        "training detector on {} sequences ({} salient) for {} epochs",
        samples.len(),
        train_labels.iter().filter(|&&l| l == 1).count(),
        cfg.detector.epochs
    );
    let (model, log) = SaliencyModel::fit(&samples, &train_labels, &cfg.detector)?;
    write_checkpoint(model.to_checkpoint()?, &cfg, &a.out.join("detector.gck"))?;
    write_jsonl(&a.out.join("detector_log.jsonl"), &log)?;

    let all: Vec<&GestureSample> = ds.samples.iter().collect();
    let aurocs = detector_auroc(&manifest, &ds, &model.logits(&all)?, &labels)?;
    for (k, v) in &aurocs {
        println!("{k} {v:.4}");
    }
    write_json(&a.out.join("metrics.json"), &json!({ "config": cfg.echo(), "auroc": aurocs }))?;
    Ok(())
}

fn detect(cfg: RunConfig, a: DetectArgs) -> Result<()> {
    let cfg = finish(cfg)?;
    let model = SaliencyModel::load(&a.detector)?;
    let (_, ds) = load_dataset(&cfg, &a.corpus)?;
    let all: Vec<&GestureSample> = ds.samples.iter().collect();
    let scores = model.score(&all)?;
    let rows: Vec<Value> = ds
        .samples
        .iter()
        .zip(&scores)
        .zip(&ds.splits)
        .map(|((s, sc), split)| json!({ "segment": s.segment_id, "split": split, "scores": sc }))
        .collect();
    write_json(&a.out, &json!({ "config": cfg.echo(), "detector": a.detector, "sequences": rows }))?;
    println!("scored {} sequences", rows.len());
    Ok(())
}

fn train_model(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    let cfg = finish(cfg)?;
    let detector = a.detector.as_deref().map(SaliencyModel::load).transpose()?;
    let (_, ds) = load_dataset(&cfg, &a.corpus)?;
    create_dir(&a.out)?;
    let mut run_echo = cfg.echo();
    run_echo["detector"] = json!(a.detector);
    write_json(&a.out.join("run_config.json"), &run_echo)?;
    let outcome = train(&TrainRequest {
        dataset: &ds,
        model: cfg.model.clone(),
        training: cfg.training.clone(),
        saliency: detector.as_ref(),
        mel: cfg.data.mel.clone(),
        out_dir: &a.out,
        resume: a.resume.as_deref(),
        stop_after: a.stop_after,
    })?;
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {} total {:.5} reg {:.5} val_reg {}",
            last.epoch,
            last.total,
            last.reg,
            last.val_reg.map_or("n/a".into(), |v| format!("{v:.5}"))
        );
    }
    Ok(())
}

fn generate(cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    let _cfg = finish(cfg)?;
    let model = TrainedModel::load(&a.checkpoint)?;
    let wave = read_wav(&a.audio)?;
    let frames = (wave.duration() * model.header.fps as f64).round() as usize;
    if frames == 0 {
        return Err(Error::Argument(format!("{} is shorter than one pose frame", a.audio.display())));
    }
    let provider: Box<dyn AsrProvider> = match &a.asr {
        Some(p) => Box::new(FileAsr::new(p)),
        None => Box::new(NullAsr),
    };
    let features = SpeechFeatureSet::from_waveform(&wave, frames, &model.header.mel, provider.as_ref())?;
    let pose = model.generate(&features, a.speaker.as_deref())?;
    pose.write_gpos(&a.out)?;
    if let Some(csv) = &a.csv {
        pose.write_csv(csv)?;
    }
    let (t, j, c) = pose.frames().dim();
    log::info!("generated pose of shape ({t}, {j}, {c}) at {} fps", pose.fps());
    println!("wrote {} ({t} frames, {j} keypoints)", a.out.display());
    Ok(())
}

fn train_syncnet(mut cfg: RunConfig, a: AuxTrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.evaluation.syncnet.epochs = e;
    }
    let cfg = finish(cfg)?;
    let (_, ds) = load_dataset(&cfg, &a.corpus)?;
    let samples = split_samples(&ds, Split::Train);
    let items: Vec<_> = samples.iter().map(|s| (s.pose.frames(), s.audio.mel().view())).collect();
    let (net, losses) = PoseSyncNet::train(&items, &cfg.evaluation.syncnet)?;
    write_checkpoint(net.to_checkpoint()?, &cfg, &a.out)?;
    println!(
        "sync network trained on {} sequences, final loss {:.5}",
        items.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train_fgd_extractor(mut cfg: RunConfig, a: AuxTrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.evaluation.fgd_extractor.epochs = e;
    }
    let cfg = finish(cfg)?;
    let (_, ds) = load_dataset(&cfg, &a.corpus)?;
    let bodies: Vec<_> = split_samples(&ds, Split::Train).iter().map(|s| s.pose.body()).collect();
    let views: Vec<_> = bodies.iter().map(|b| b.view()).collect();
    let (ex, losses) = PoseFeatureExtractor::train(&views, &cfg.evaluation.fgd_extractor)?;
    write_checkpoint(ex.to_checkpoint()?, &cfg, &a.out)?;
    println!(
        "feature extractor trained on {} sequences, final loss {:.5}",
        views.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn evaluate_cmd(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let model = a.checkpoint.as_deref().map(TrainedModel::load).transpose()?;
    if let Some(m) = &model {
        // Features must be computed the way the model saw them in training.
        cfg.data.mel = m.header.mel.clone();
        cfg.data.fps = m.header.fps;
    }
    let cfg = finish(cfg)?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        _ => Split::Test,
    };
    let (_, ds) = load_dataset(&cfg, &a.corpus)?;
    let reference = split_samples(&ds, split);
    if reference.is_empty() {
        return Err(Error::Argument(format!("the corpus has no {} samples", a.split)));
    }
    let generated = match &model {
        Some(m) => reference
            .iter()
            .map(|s| m.generate(&s.audio, Some(&s.speaker_id)))
            .collect::<Result<Vec<_>>>()?,
        None => reference.iter().map(|s| s.pose.clone()).collect(),
    };
    let extractor = a.fgd_extractor.as_deref().map(PoseFeatureExtractor::load).transpose()?;
    let syncnet = a.syncnet.as_deref().map(PoseSyncNet::load).transpose()?;
    let echo = json!({
        "run": cfg.echo(),
        "checkpoint": a.checkpoint,
        "ground_truth": a.ground_truth,
        "corpus": a.corpus,
        "split": a.split,
        "syncnet": a.syncnet,
        "fgd_extractor": a.fgd_extractor,
    });
    let opts = EvalOptions {
        bc_sigma: cfg.evaluation.bc_sigma,
        onsets: cfg.evaluation.onsets(),
    };
    let report = evaluate(
        &generated,
        &reference,
        extractor.as_ref(),
        syncnet.as_ref().map(|n| n as &dyn SyncEmbedder),
        &opts,
        echo,
    )?;
    write_json(&a.out, &serde_json::to_value(&report).expect("report serializes"))?;
    print!("{}", report.to_table());
    Ok(())
}
