mod common;

use candle_core::{DType, Device, Tensor};
use common::*;
use gesture_core::body::consistency_loss;
use gesture_core::detector::{detector_loss, topk_pool, DetectorConfig, SalientPostureDetector};
use gesture_core::face::{alignment_loss, AlignmentClassifier};
use gesture_core::nn::ops::{sigmoid, softmax_last};
use gesture_core::nn::ParamStore;
use gesture_core::training::{huber_part_loss, reconstruction_loss, regression_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values whose differences from `base` stay clear of the L1 kink.
fn away_from(rng: &mut ChaCha8Rng, base: &[f64], gap: f64) -> Vec<f64> {
    base.iter()
        .map(|b| {
            let m = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) { b + m } else { b - m }
        })
        .collect()
}

#[test]
fn consistency_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [2, 5, 4];
    let zp = uniform(&mut rng, 40, -1.0, 1.0);
    let za = tensor(&uniform(&mut rng, 40, -1.0, 1.0), &shape);
    let w = tensor(&uniform(&mut rng, 10, 0.0, 1.0), &[2, 5]);
    let err = gradient_error(|x| consistency_loss(x, &za, Some(&w), 1e-8).unwrap(), &zp, &shape, STEP);
    assert!(err < TOL, "zp gradient error {err}");
    let zp_t = tensor(&zp, &shape);
    let za_v: Vec<f64> = za.flatten_all().unwrap().to_vec1().unwrap();
    let err = gradient_error(|x| consistency_loss(&zp_t, x, None, 1e-8).unwrap(), &za_v, &shape, STEP);
    assert!(err < TOL, "za gradient error {err}");
}

#[test]
fn reconstruction_and_regression_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = [2, 3, 4, 2];
    let truth = uniform(&mut rng, 48, -1.0, 1.0);
    let pred = away_from(&mut rng, &truth, 1e-3);
    let tt = tensor(&truth, &shape);
    let err = gradient_error(|x| reconstruction_loss(x, &tt).unwrap(), &pred, &shape, STEP);
    assert!(err < TOL, "recon gradient error {err}");

    let fshape = [2, 3, 5, 2];
    let ftruth = uniform(&mut rng, 60, -1.0, 1.0);
    let fpred = tensor(&away_from(&mut rng, &ftruth, 1e-3), &fshape);
    let ft = tensor(&ftruth, &fshape);
    let err = gradient_error(|x| regression_loss(x, &tt, Some((&fpred, &ft))).unwrap(), &pred, &shape, STEP);
    assert!(err < TOL, "regression gradient error {err}");
}

#[test]
fn huber_gradient_in_both_regimes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [2, 4, 3, 2];
    let truth = uniform(&mut rng, 48, -1.0, 1.0);
    let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-2.5..2.5)).collect();
    let tt = tensor(&truth, &shape);
    let fshape = [2, 4, 2, 2];
    let face = tensor(&uniform(&mut rng, 32, -1.0, 1.0), &fshape);
    let fpred = tensor(&uniform(&mut rng, 32, -3.0, 3.0), &fshape);
    let err = gradient_error(|x| huber_part_loss(x, &tt, Some((&fpred, &face)), 1.0).unwrap(), &pred, &shape, STEP);
    assert!(err < TOL, "huber gradient error {err}");
}

#[test]
fn alignment_loss_gradient_through_classifier() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new(5, DType::F64);
    let clf = AlignmentClassifier::new(&mut store, "align", 3, 6).unwrap();
    let shape = [4, 5, 6];
    let pairs = uniform(&mut rng, 120, -1.0, 1.0);
    let classes = Tensor::from_vec(vec![0u32, 1, 1, 0], 4, &Device::Cpu).unwrap();
    let err = gradient_error(|x| alignment_loss(&clf.forward(x).unwrap(), &classes).unwrap(), &pairs, &shape, STEP);
    assert!(err < TOL, "alignment gradient error {err}");

    let logits = uniform(&mut rng, 8, -2.0, 2.0);
    let err = gradient_error(|x| alignment_loss(&softmax_last(x).unwrap(), &classes).unwrap(), &logits, &[4, 2], STEP);
    assert!(err < TOL, "alignment logit gradient error {err}");
}

#[test]
fn detector_bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels = tensor(&[1.0, 0.0, 1.0], &[3]);
    let logits = uniform(&mut rng, 3 * 20, -3.0, 3.0);
    let loss = |x: &Tensor| detector_loss(&topk_pool(&sigmoid(x).unwrap(), 4).unwrap(), &labels).unwrap();
    let err = gradient_error(loss, &logits, &[3, 20], STEP);
    assert!(err < TOL, "BCE gradient error {err}");

    let cfg = DetectorConfig {
        d1: 6,
        d2: 8,
        top_k: 3,
        theta_phi_dim: 4,
        conv_channels: vec![5],
        conv_kernel: 3,
        ..DetectorConfig::default()
    };
    let mut store = ParamStore::new(7, DType::F64);
    let det = SalientPostureDetector::new(&mut store, &cfg, 3).unwrap();
    let shape = [2, 8, 3, 2];
    let pose = uniform(&mut rng, 96, -1.0, 1.0);
    let labels = tensor(&[1.0, 0.0], &[2]);
    let loss = |x: &Tensor| detector_loss(&topk_pool(&det.forward(x).unwrap(), 3).unwrap(), &labels).unwrap();
    let err = gradient_error(loss, &pose, &shape, STEP);
    assert!(err < TOL, "detector gradient error {err}");
}
