mod common;

use candle_core::{DType, Device, Tensor};
use common::tensor;
use gesture_core::detector::{bilinear_affinity, index_prior_weights, DetectorConfig, SalientPostureDetector};
use gesture_core::nn::ParamStore;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_dtype(DType::F64).unwrap().to_vec2().unwrap()
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

#[test]
fn index_prior_rows_are_distributions_peaked_on_the_diagonal() {
    for t in [1, 3, 16, 64, 128] {
        let w = rows(&index_prior_weights(t, DType::F64).unwrap());
        for (i, row) in w.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "T={t} row {i}");
            assert_eq!(argmax(row), i, "T={t} row {i}");
        }
    }
}

#[test]
fn index_prior_first_row_for_three_frames() {
    let w = rows(&index_prior_weights(3, DType::F64).unwrap());
    let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
    let want = [1.0 / z, (-1.0f64).exp() / z, (-2.0f64).exp() / z];
    for (g, w) in w[0].iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    for (g, w) in w[0].iter().zip([0.6652, 0.2447, 0.0900]) {
        assert!((g - w).abs() < 1e-4);
    }
    // Rows are mirror images of each other about the centre.
    assert!((w[0][0] - w[2][2]).abs() < 1e-15 && (w[1][0] - w[1][2]).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn affinity_rows_sum_to_one(seed: u64, t in 1usize..40, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..2 * t * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let theta = tensor(&v[..t * d], &[1, t, d]);
        let phi = tensor(&v[t * d..], &[1, t, d]);
        let w = bilinear_affinity(&theta, &phi).unwrap().squeeze(0).unwrap();
        for row in rows(&w) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}

#[test]
fn detector_affinity_rows_sum_to_one_for_every_length() {
    let cfg = DetectorConfig {
        d1: 8,
        d2: 8,
        theta_phi_dim: 8,
        conv_channels: vec![8],
        ..DetectorConfig::default()
    };
    let mut store = ParamStore::new(0, DType::F64);
    let det = SalientPostureDetector::new(&mut store, &cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for t in [1, 3, 16, 64, 128] {
        let v: Vec<f64> = (0..t * 4 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pose = Tensor::from_vec(v, (1, t, 4, 2), &Device::Cpu).unwrap();
        let x = det.extract_initial_features(&pose).unwrap();
        let w1 = det.affinity_weights(&x).unwrap().squeeze(0).unwrap();
        for row in rows(&w1) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "T={t}");
        }
        let scores = det.forward(&pose).unwrap();
        assert_eq!(scores.dims(), [1, t]);
        let logits = rows(&det.logits(&pose).unwrap());
        for (s, l) in rows(&scores)[0].iter().zip(&logits[0]) {
            assert!((s - 1.0 / (1.0 + (-l).exp())).abs() < 1e-12, "T={t}");
        }
    }
}
