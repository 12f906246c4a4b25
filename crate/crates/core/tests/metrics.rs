mod common;

use ngc::dataset::Truth;
use ngc::metrics::{auroc, best_of_sweep, f_measure, sweep_zeta, zeta_grid};
use ngc::ood::Verdict;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Coarse values so ties between and within groups are frequent.
fn scores() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((-20i32..=20).prop_map(|v| f64::from(v) / 10.0), 1..120)
}

proptest! {
    #[test]
    fn mann_whitney_equals_trapezoid(ind in scores(), ood in scores()) {
        let a = auroc(&ind, &ood).unwrap();
        prop_assert!((a - common::trapezoid_auroc(&ind, &ood)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn swapping_groups_complements(ind in scores(), ood in scores()) {
        let a = auroc(&ind, &ood).unwrap();
        let b = auroc(&ood, &ind).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn monotone_transform_invariance(ind in scores(), ood in scores()) {
        let f = |v: &Vec<f64>| v.iter().map(|&s| (3.0 * s).exp() - 7.0).collect::<Vec<_>>();
        prop_assert_eq!(auroc(&ind, &ood).unwrap(), auroc(&f(&ind), &f(&ood)).unwrap());
    }
}

#[test]
fn separated_and_sign_flipped() {
    let ind = [0.9, 0.8, 0.95];
    let ood = [0.1, -0.2];
    assert_eq!(auroc(&ind, &ood).unwrap(), 1.0);
    let neg = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
    assert_eq!(auroc(&neg(&ood), &neg(&ind)).unwrap(), 1.0);
    assert_eq!(auroc(&neg(&ind), &neg(&ood)).unwrap(), 0.0);
    assert_eq!(auroc(&[0.5; 4], &[0.5; 3]).unwrap(), 0.5);
}

fn brute_macro_f(verdicts: &[Verdict], truth: &[Truth], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let claimed = |i: usize| verdicts[i] == Verdict::Ind(c);
        let actual = |i: usize| truth[i] == Truth::Class(c);
        let n = verdicts.len();
        let tp = (0..n).filter(|&i| claimed(i) && actual(i)).count() as f64;
        let pred = (0..n).filter(|&i| claimed(i)).count() as f64;
        let real = (0..n).filter(|&i| actual(i)).count() as f64;
        let p = if pred > 0.0 { tp / pred } else { 0.0 };
        let r = if real > 0.0 { tp / real } else { 0.0 };
        total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    total / k as f64
}

#[test]
fn f_measure_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..60);
        let truth: Vec<Truth> = (0..n)
            .map(|_| if rng.random_bool(0.3) { Truth::Ood } else { Truth::Class(rng.random_range(0..k)) })
            .collect();
        let verdicts: Vec<Verdict> = (0..n)
            .map(|_| if rng.random_bool(0.3) { Verdict::Ood } else { Verdict::Ind(rng.random_range(0..k)) })
            .collect();
        let f = f_measure(&verdicts, &truth, k).unwrap();
        assert!((f - brute_macro_f(&verdicts, &truth, k)).abs() < 1e-12);
    }
}

#[test]
fn sweep_covers_grid_and_extremes() {
    let grid = zeta_grid();
    assert_eq!(grid.len(), 201);
    assert_eq!((grid[0], grid[100], grid[200]), (-1.0, 0.0, 1.0));
    let scores = [0.9, 0.8, 0.2, 0.1];
    let predicted = [0, 1, 0, 1];
    let truth = [Truth::Class(0), Truth::Class(1), Truth::Ood, Truth::Ood];
    let sweep = sweep_zeta(&scores, &predicted, &truth, 2, &grid).unwrap();
    // Accept everything at -1, reject everything at 1.
    assert!((sweep[0].1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(sweep[200].1, 0.0);
    let (zeta, best) = best_of_sweep(&sweep).unwrap();
    assert_eq!(best, 1.0);
    assert_eq!(zeta, 0.21);
}
