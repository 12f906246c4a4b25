// Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::DMatrix;
use ndarray::Array2;
use ngc::graph::{build_knn_graph, GraphParams, SparseGraph};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_unit_rows<R: Rng>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let m: Array2<f64> = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng));
        let norms: Vec<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        if norms.iter().all(|&v| v > 1e-6) {
            let mut out = m;
            for (mut row, norm) in out.rows_mut().into_iter().zip(norms) {
                row.mapv_inplace(|v| v / norm);
            }
            return out;
        }
    }
}

/// Symmetric k-NN graph over random unit vectors.
pub fn random_knn_graph<R: Rng>(rng: &mut R, n: usize, k: usize, d: usize) -> SparseGraph {
    let z = random_unit_rows(n, d, rng);
    build_knn_graph(&z, &GraphParams { k, ..Default::default() }).unwrap()
}

/// Erdos-Renyi style graph with unit weights.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64) -> SparseGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j, 1.0));
            }
        }
    }
    SparseGraph::from_edges(n, edges).unwrap()
}

/// Dense `(I - alpha S)^{-1} (1 - alpha) Y` by LU, with `S` assembled
/// from the dense adjacency.
pub fn dense_propagate(graph: &SparseGraph, y: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let w = graph.to_dense();
    let n = w.nrows();
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let s = if deg[i] > 0.0 && deg[j] > 0.0 {
            w[[i, j]] / (deg[i] * deg[j]).sqrt()
        } else {
            0.0
        };
        f64::from(i == j) - alpha * s
    });
    let b = DMatrix::from_fn(n, y.ncols(), |i, j| (1.0 - alpha) * y[[i, j]]);
    let x = a.lu().solve(&b).expect("I - alpha S is nonsingular");
    Array2::from_shape_fn((n, y.ncols()), |(i, j)| x[(i, j)])
}

/// BFS labeling over the candidate-induced subgraph; largest component
/// with ties to the one containing the smallest id.
pub fn bfs_lcc(graph: &SparseGraph, candidates: &[usize]) -> Vec<usize> {
    let n = graph.num_nodes();
    let mut member = vec![false; n];
    for &c in candidates {
        member[c] = true;
    }
    let mut label = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !member[start] || label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut comp = vec![];
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &(v, _) in graph.neighbors(u) {
                if member[v] && label[v] == usize::MAX {
                    label[v] = id;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    // Components are discovered in order of their smallest id.
    let mut best: Vec<usize> = Vec::new();
    for c in comps {
        if c.len() > best.len() {
            best = c;
        }
    }
    best
}

/// Area under the ROC polyline, thresholds swept from high to low with
/// tied scores moving both rates at once.
pub fn trapezoid_auroc(ind: &[f64], ood: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = ind.iter().map(|&s| (s, true)).chain(ood.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, q) = (ind.len() as f64, ood.len() as f64);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - prev_fp) / q * (tp + prev_tp) / (2.0 * p);
    }
    area
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
