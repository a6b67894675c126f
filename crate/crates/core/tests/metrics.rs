mod common;

use common::antithetic_gaussian;
use gesture_core::data::synth::SynthConfig;
use gesture_core::data::{make_synthetic_corpus, Dataset, DatasetOptions, GestureSample, Split};
use gesture_core::eval::fgd::moments;
use gesture_core::eval::{beat_consistency, evaluate, fgd, frechet_distance, EvalOptions, FeatureExtractorConfig, PoseFeatureExtractor};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn unit_mean_shift_gives_unit_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = antithetic_gaussian(&mut rng, 10_000, &[0.0]);
    let b = antithetic_gaussian(&mut rng, 10_000, &[1.0]);
    let d = fgd(a.view(), b.view()).unwrap();
    assert!((d - 1.0).abs() < 0.02, "{d}");

    let mut shift = vec![0.0; 4];
    shift[2] = 1.0;
    let a = antithetic_gaussian(&mut rng, 10_000, &[0.0; 4]);
    let b = antithetic_gaussian(&mut rng, 10_000, &shift);
    let d = fgd(a.view(), b.view()).unwrap();
    assert!((d - 1.0).abs() < 0.02, "{d}");
}

#[test]
fn identical_sets_have_zero_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = Array2::from_shape_fn((500, 6), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
    assert!(fgd(a.view(), a.view()).unwrap() < 1e-6);
}

#[test]
fn diagonal_covariances_follow_the_closed_form() {
    let mu1 = DVector::from_vec(vec![0.0, 1.0, -2.0]);
    let mu2 = DVector::from_vec(vec![1.0, 1.0, 0.0]);
    let s1 = [1.0f64, 4.0, 0.25];
    let s2 = [9.0f64, 1.0, 0.25];
    let c1 = DMatrix::from_diagonal(&DVector::from_vec(s1.to_vec()));
    let c2 = DMatrix::from_diagonal(&DVector::from_vec(s2.to_vec()));
    let want: f64 = (mu1.clone() - mu2.clone()).norm_squared()
        + s1.iter().zip(&s2).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>();
    let got = frechet_distance(&mu1, &c1, &mu2, &c2).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fgd_is_symmetric_and_nonnegative(seed: u64, n in 3usize..40, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let b = Array2::from_shape_fn((n + 3, d), |_| rng.random_range(-1.0..3.0));
        let ab = fgd(a.view(), b.view()).unwrap();
        let ba = fgd(b.view(), a.view()).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
    }

    #[test]
    fn moments_match_direct_sums(seed: u64, n in 2usize..30, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let (mu, cov) = moments(x.view()).unwrap();
        for i in 0..d {
            let m = x.column(i).sum() / n as f64;
            prop_assert!((mu[i] - m).abs() < 1e-12);
            for j in 0..d {
                let mj = x.column(j).sum() / n as f64;
                let c: f64 = (0..n).map(|r| (x[[r, i]] - m) * (x[[r, j]] - mj)).sum::<f64>() / (n - 1) as f64;
                prop_assert!((cov[(i, j)] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beat_consistency_of_a_beat_set_with_itself_is_one(times in prop::collection::vec(0.0f64..10.0, 1..20), sigma in 0.01f64..1.0) {
        prop_assert_eq!(beat_consistency(&times, &times, sigma).unwrap(), 1.0);
    }
}

#[test]
fn ground_truth_against_itself() {
    let cfg = SynthConfig { n_sequences: 40, ..SynthConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_corpus(&cfg, dir.path()).unwrap();
    let ds = Dataset::load(&manifest, &DatasetOptions::default()).unwrap();
    let train: Vec<_> = ds.indices(Split::Train).iter().map(|&i| ds.samples[i].pose.body()).collect();
    let views: Vec<_> = train.iter().map(|b| b.view()).collect();
    let ex_cfg = FeatureExtractorConfig { epochs: 2, ..FeatureExtractorConfig::default() };
    let (extractor, _) = PoseFeatureExtractor::train(&views, &ex_cfg).unwrap();
    let reference: Vec<&GestureSample> = ds.samples.iter().collect();
    let generated: Vec<_> = reference.iter().map(|s| s.pose.clone()).collect();
    let report = evaluate(&generated, &reference, Some(&extractor), None, &EvalOptions::default(), serde_json::json!({})).unwrap();
    assert_eq!(report.l2, 0.0);
    assert!(report.fgd.unwrap() < 1e-6);
    assert!(report.bc > 0.0 && report.bc <= 1.0);
    assert!(report.psd.is_none());
    report.validate().unwrap();
}
