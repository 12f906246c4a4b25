mod common;

use ndarray::{Array2, Axis};
use ngc::graph::{build_knn_graph, knn_indices, refine_graph, GraphParams, Symmetrization};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute_knn(z: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = z.nrows();
    (0..n)
        .map(|j| {
            let mut others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            others.sort_by(|&a, &b| z.row(b).dot(&z.row(j)).total_cmp(&z.row(a).dot(&z.row(j))).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect()
}

fn brute_weights(z: &Array2<f64>, k: usize, gamma: f64, sym: Symmetrization) -> Array2<f64> {
    let n = z.nrows();
    let mut dir = Array2::<f64>::zeros((n, n));
    for (j, nn) in brute_knn(z, k).into_iter().enumerate() {
        for i in nn {
            let d = z.row(i).dot(&z.row(j));
            if d > 0.0 {
                dir[[i, j]] = d.powf(gamma);
            }
        }
    }
    Array2::from_shape_fn((n, n), |(a, b)| match sym {
        Symmetrization::Max => dir[[a, b]].max(dir[[b, a]]),
        Symmetrization::Mean => 0.5 * (dir[[a, b]] + dir[[b, a]]),
    })
}

// Integer rows: every dot product is exact, so ties are real ties.
fn lattice_rows() -> impl Strategy<Value = Array2<f64>> {
    (4usize..20, 2usize..4).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-2i32..=2, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v.into_iter().map(f64::from).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn knn_matches_brute_force(z in lattice_rows(), k_frac in 0.0f64..1.0) {
        let k = 1 + ((z.nrows() - 2) as f64 * k_frac) as usize;
        prop_assert_eq!(knn_indices(&z, k).unwrap(), brute_knn(&z, k));
    }

    #[test]
    fn graph_matches_dense_definition(z in lattice_rows(), k_frac in 0.0f64..1.0, gamma in 0.0f64..3.0, mean in any::<bool>()) {
        let k = 1 + ((z.nrows() - 2) as f64 * k_frac) as usize;
        let sym = if mean { Symmetrization::Mean } else { Symmetrization::Max };
        let g = build_knn_graph(&z, &GraphParams { k, gamma, symmetrization: sym }).unwrap();
        let dense = g.to_dense();
        let expected = brute_weights(&z, k, gamma, sym);
        for (a, b) in dense.iter().zip(expected.iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
        prop_assert_eq!(&dense, &dense.t().to_owned());
        prop_assert!(g.edges().iter().all(|&(i, j, w)| i < j && w > 0.0));
    }

    #[test]
    fn permutation_relabels_nodes(seed in any::<u64>(), n in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = common::random_unit_rows(n, 4, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let zp = z.select(Axis(0), &perm);
        let params = GraphParams { k: 3, ..Default::default() };
        let g = build_knn_graph(&z, &params).unwrap();
        let gp = build_knn_graph(&zp, &params).unwrap();
        // Continuous data: no ties, so the edge sets correspond exactly.
        prop_assert_eq!(g.num_edges(), gp.num_edges());
        for &(a, b, w) in gp.edges() {
            prop_assert_eq!(g.weight(perm[a], perm[b]), w);
        }
    }
}

#[test]
fn degrees_are_row_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = common::random_knn_graph(&mut rng, 60, 5, 6);
    let dense = g.to_dense();
    for (i, &d) in g.degrees().iter().enumerate() {
        assert!((dense.row(i).sum() - d).abs() < 1e-12);
    }
}

#[test]
fn refinement_isolates_dropped_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = common::random_knn_graph(&mut rng, 40, 4, 3);
    let keep: Vec<bool> = (0..40).map(|i| i % 3 != 0).collect();
    let r = refine_graph(&g, &keep).unwrap();
    assert_eq!(r.num_nodes(), 40);
    for &(i, j, w) in r.edges() {
        assert!(keep[i] && keep[j]);
        assert_eq!(g.weight(i, j), w);
    }
    let survivors = g.edges().iter().filter(|e| keep[e.0] && keep[e.1]).count();
    assert_eq!(r.num_edges(), survivors);
    assert!(refine_graph(&g, &keep[..10]).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let z = Array2::eye(3);
    assert!(build_knn_graph(&z, &GraphParams { k: 3, ..Default::default() }).is_err());
    assert!(build_knn_graph(&z, &GraphParams { k: 0, ..Default::default() }).is_err());
    let mut bad = z.clone();
    bad[[0, 0]] = f64::NAN;
    assert!(knn_indices(&bad, 1).is_err());
}
