mod common;

use ndarray::Array2;
use ngc::model::{ModelShape, ToyModel};
use ngc::ood::{compute_prototypes, detect, ood_score, score_all, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn scores_stay_in_range_and_ignore_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(k..40);
        let z = common::random_unit_rows(n, 5, &mut rng);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let selected: Vec<bool> = (0..n).map(|i| i < k || rng.random_bool(0.5)).collect();
        let protos = compute_prototypes(&z, &labels, &selected, k).unwrap();
        for row in protos.vectors().rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        let probe = common::random_unit_rows(10, 5, &mut rng);
        let scores = score_all(&probe, &protos).unwrap();
        for (i, &s) in scores.iter().enumerate() {
            assert!((-1.0..=1.0).contains(&s));
            let scaled = probe.row(i).mapv(|v| v * 7.5);
            assert!((ood_score(scaled.view(), &protos).unwrap() - s).abs() < 1e-12);
        }
        // A prototype scores itself at 1.
        let p0 = protos.vectors().row(0).to_owned();
        assert!((ood_score(p0.view(), &protos).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn detect_is_threshold_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = ToyModel::new(6, 3, ModelShape::default(), &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((40, 6), || rng.random_range(-2.0..2.0));
    let fwd = model.forward(&x).unwrap();
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let protos = compute_prototypes(&fwd.z, &labels, &[true; 40], 3).unwrap();
    let mut prev_rejected = 0;
    for zeta in [-1.0, -0.5, 0.0, 0.3, 0.6, 0.9, 1.0] {
        let out = detect(&x, &model, &protos, zeta).unwrap();
        let rejected = out.iter().filter(|d| d.verdict == Verdict::Ood).count();
        assert!(rejected >= prev_rejected);
        prev_rejected = rejected;
        for d in &out {
            assert_eq!(d.verdict == Verdict::Ood, d.score < zeta);
            if let Verdict::Ind(c) = d.verdict {
                assert_eq!(c, d.predicted_class);
            }
        }
    }
    assert!(detect(&x, &model, &protos, 1.01).is_err());
}
