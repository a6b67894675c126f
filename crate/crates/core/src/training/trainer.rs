//! Joint optimization of both branches with a frozen detector, with a
//! JSON-lines log, periodic/best/last checkpoints and exact resume.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainingConfig};
use super::losses::{regression_loss, total_loss};
use super::model::{GestureModel, ModelDims, ModelHeader, Normalization, PreparedSet, TrainedModel, ADAM_PREFIX, MODEL_KIND};
use crate::data::{Dataset, GestureSample, MelConfig, Split};
use crate::error::{Error, Result};
use crate::face::{gather_pairs, pair_accuracy, sample_feature_pairs};
use crate::nn::ops::scalar;
use crate::nn::{Adam, AdamConfig, Checkpoint, NamedTensor};
use crate::saliency::SaliencyModel;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.gck";
pub const BEST_CHECKPOINT: &str = "best.gck";

const EVAL_BATCH: usize = 32;
const EVAL_PAIR_SEED: u64 = 0x5eed_a11e;

pub fn periodic_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.gck")
}

/// One line of the training log. Loss values are sample-weighted epoch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub recon: f64,
    pub reg: f64,
    pub huber: f64,
    pub con: f64,
    pub align: f64,
    pub total: f64,
    pub pair_accuracy: Option<f64>,
    pub val_reg: Option<f64>,
    pub val_pair_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub dataset: &'a Dataset,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    /// Frozen detector for saliency weights.
    pub saliency: Option<&'a SaliencyModel>,
    /// Mel settings the dataset was built with, recorded for inference.
    pub mel: MelConfig,
    pub out_dir: &'a Path,
    pub resume: Option<&'a Path>,
    /// Stop once this many epochs are complete, as if interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochRecord>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn chunks_u32(n: usize, size: usize) -> Vec<Vec<u32>> {
    (0..n as u32).collect::<Vec<_>>().chunks(size).map(<[u32]>::to_vec).collect()
}

/// Regression loss over a whole set, sample-weighted.
pub fn set_regression_loss(model: &GestureModel, set: &PreparedSet) -> Result<f64> {
    let mut total = 0.0;
    for items in chunks_u32(set.len(), EVAL_BATCH) {
        let b = set.batch(&items)?;
        let (pb, pf) = model.predict(&b.mel, b.asr.as_ref())?;
        let l = match &pf {
            Some(pf) => regression_loss(&pb, &b.body, Some((pf, &b.face)))?,
            None => regression_loss(&pb, &b.body, None)?,
        };
        total += scalar(&l)? * items.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Alignment accuracy on pairs drawn from `set` with a fixed seed.
pub fn set_pair_accuracy(model: &GestureModel, set: &PreparedSet, pairs_per_item: usize, seed: u64) -> Result<Option<f64>> {
    let Some((face, classifier)) = &model.face else {
        return Ok(None);
    };
    let clip = model.config.face.clip_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut n) = (0.0, 0usize);
    for items in chunks_u32(set.len(), EVAL_BATCH) {
        let b = set.batch(&items)?;
        let zb = model.body.encode_audio(&b.mel, b.asr.as_ref())?;
        let zf = face.encode_audio(&b.mel)?;
        let count = items.len() * pairs_per_item;
        let pairs = sample_feature_pairs(&mut rng, items.len(), set.frames(), clip, count, model.config.face.positive_fraction)?;
        let (x, classes) = gather_pairs(&zb, &zf, &pairs, clip)?;
        hits += pair_accuracy(&classifier.forward(&x)?, &classes)? * count as f64;
        n += count;
    }
    Ok(Some(hits / n as f64))
}

fn read_log(path: &Path, through_epoch: usize) -> Result<Vec<EpochRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpochRecord = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(path.display().to_string(), e.to_string()))?;
        if rec.epoch <= through_epoch {
            out.push(rec);
        }
    }
    Ok(out)
}

struct Session {
    model: GestureModel,
    header: ModelHeader,
    adam: Adam,
}

impl Session {
    fn checkpoint(&self) -> Result<Checkpoint> {
        let (step, state) = self.adam.export_state()?;
        let mut tensors: BTreeMap<String, NamedTensor> = self.model.store.export()?;
        tensors.extend(state);
        let header = serde_json::json!({ "model_header": self.header, "adam_step": step });
        Ok(Checkpoint::new(MODEL_KIND, header, tensors))
    }
}

/// Runs (or resumes) training and returns the final model and full log.
pub fn train(req: &TrainRequest<'_>) -> Result<TrainOutcome> {
    req.model.validate()?;
    req.training.validate()?;
    let cfg = &req.training;
    let ds = req.dataset;
    let train_idx = ds.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Argument("the corpus has no training samples".into()));
    }
    let train_samples: Vec<&GestureSample> = train_idx.iter().map(|&i| &ds.samples[i]).collect();
    let val_samples: Vec<&GestureSample> = ds.indices(Split::Val).iter().map(|&i| &ds.samples[i]).collect();

    let normalization = Normalization::fit(&train_samples)?;
    let layout = ds.layout.as_ref().clone();
    let dims = ModelDims {
        body_points: layout.num_body(),
        face_points: layout.num_face(),
        n_mels: normalization.mel.mean.len(),
        asr_dim: normalization.asr.as_ref().map_or(0, |a| a.mean.len()),
    };
    let saliency = match (cfg.saliency_weighting, req.saliency) {
        (true, Some(det)) => Some(det.score(&train_samples)?),
        (true, None) => {
            log::warn!("no detector supplied; consistency loss is unweighted");
            None
        }
        (false, _) => None,
    };
    let train_set = PreparedSet::new(&train_samples, &normalization, &layout, saliency.as_deref(), DType::F32)?;
    let val_set = if val_samples.is_empty() {
        None
    } else {
        Some(PreparedSet::new(&val_samples, &normalization, &layout, None, DType::F32)?)
    };
    if req.model.face_enabled && train_set.frames() <= req.model.face.clip_len {
        return Err(Error::Config(format!(
            "alignment clips of {} frames need longer samples than {}",
            req.model.face.clip_len,
            train_set.frames()
        )));
    }

    let model = GestureModel::new(&req.model, dims, cfg.seed, DType::F32)?;
    let adam = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            ..AdamConfig::default()
        },
        &model.prefixes(),
    );
    let mut session = Session {
        model,
        header: ModelHeader {
            model: req.model.clone(),
            training: cfg.clone(),
            dims,
            layout,
            fps: train_samples[0].pose.fps(),
            mel: req.mel.clone(),
            normalization,
            epoch: 0,
            best_val: None,
        },
        adam,
    };

    std::fs::create_dir_all(req.out_dir).map_err(|e| Error::io(req.out_dir, e))?;
    let log_path = req.out_dir.join(LOG_FILE);
    let mut log = Vec::new();
    if let Some(path) = req.resume {
        let ckpt = Checkpoint::read(path)?;
        ckpt.expect_kind(MODEL_KIND, path)?;
        let saved: ModelHeader = ckpt.field("model_header", path)?;
        if saved.model != req.model || saved.dims != dims {
            return Err(Error::Config(format!(
                "{} was trained with a different architecture or corpus layout",
                path.display()
            )));
        }
        let step: u64 = ckpt.field("adam_step", path)?;
        let (state, params): (BTreeMap<_, _>, BTreeMap<_, _>) =
            ckpt.tensors.into_iter().partition(|(k, _)| k.starts_with(ADAM_PREFIX));
        session.model.store.import(&params, &path.display().to_string())?;
        session.adam.import_state(&session.model.store, step, &state)?;
        session.header.epoch = saved.epoch;
        session.header.best_val = saved.best_val;
        log = read_log(&log_path, saved.epoch)?;
        log::info!("resuming from epoch {} of {}", saved.epoch, cfg.epochs);
    }
    let mut log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    for rec in &log {
        writeln!(log_file, "{}", serde_json::to_string(rec).expect("record serializes")).map_err(|e| Error::io(&log_path, e))?;
    }

    let weights = cfg.weights();
    let n = train_set.len();
    while session.header.epoch < cfg.epochs {
        if req.stop_after.is_some_and(|s| session.header.epoch >= s) {
            break;
        }
        let epoch = session.header.epoch + 1;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 6];
        let mut acc_sum = 0.0;
        for items in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(items)?;
            let step = session.model.losses(&batch, cfg, &mut rng)?;
            let total = total_loss(&step.parts, &weights)?;
            let vals = step.parts.values()?;
            let w = items.len() as f64;
            for (s, v) in sums.iter_mut().zip(vals.iter().chain([scalar(&total)?].iter())) {
                *s += v * w;
            }
            acc_sum += step.pair_accuracy.unwrap_or(0.0) * w;
            session.adam.step(&session.model.store, &total.backward()?)?;
        }
        let m = |i: usize| sums[i] / n as f64;
        let (val_reg, val_acc) = match &val_set {
            Some(v) => (
                Some(set_regression_loss(&session.model, v)?),
                set_pair_accuracy(&session.model, v, cfg.pairs_per_item, EVAL_PAIR_SEED)?,
            ),
            None => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            recon: m(0),
            reg: m(1),
            huber: m(2),
            con: m(3),
            align: m(4),
            total: m(5),
            pair_accuracy: session.model.face.as_ref().map(|_| acc_sum / n as f64),
            val_reg,
            val_pair_accuracy: val_acc,
        };
        log::info!(
            "epoch {epoch}: total {:.4} reg {:.4} con {:.4} align {:.4} val_reg {:?}",
            rec.total,
            rec.reg,
            rec.con,
            rec.align,
            rec.val_reg
        );
        writeln!(log_file, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| Error::io(&log_path, e))?;
        session.header.epoch = epoch;

        let score = rec.val_reg.unwrap_or(rec.reg);
        let improved = session.header.best_val.is_none_or(|b| score < b);
        if improved {
            session.header.best_val = Some(score);
            session.checkpoint()?.write(&req.out_dir.join(BEST_CHECKPOINT))?;
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            session.checkpoint()?.write(&req.out_dir.join(periodic_checkpoint_name(epoch)))?;
        }
        log.push(rec);
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;
    session.checkpoint()?.write(&req.out_dir.join(LAST_CHECKPOINT))?;
    let Session { model, header, .. } = session;
    Ok(TrainOutcome {
        model: TrainedModel::new(model, header),
        log,
    })
}

/// Paths of the checkpoints a run writes into `out_dir`.
pub fn last_checkpoint(out_dir: &Path) -> PathBuf {
    out_dir.join(LAST_CHECKPOINT)
}
