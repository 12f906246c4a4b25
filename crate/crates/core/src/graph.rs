//! Undirected weighted k-NN graphs over unit-norm embeddings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{NgcError, Result};

/// Symmetric sparse adjacency with no self-loops.
///
/// Edges are stored once as `(i, j, w)` with `i < j`, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    degrees: Vec<f64>,
    offsets: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
}

impl SparseGraph {
    pub fn empty(num_nodes: usize) -> Self {
        Self::from_sorted(num_nodes, Vec::new())
    }

    /// Builds a graph from undirected edges given in either orientation.
    /// Rejects self-loops, duplicate pairs and weights that are not
    /// strictly positive and finite.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut list = Vec::new();
        for (a, b, w) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(NgcError::invalid("edges", format!("edge ({a}, {b}) outside {num_nodes} nodes")));
            }
            if a == b {
                return Err(NgcError::invalid("edges", format!("self-loop on node {a}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(NgcError::invalid("edges", format!("weight {w} on ({a}, {b}) is not positive and finite")));
            }
            list.push((a.min(b), a.max(b), w));
        }
        list.sort_by_key(|e| (e.0, e.1));
        if let Some(w) = list.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(NgcError::invalid("edges", format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        Ok(Self::from_sorted(num_nodes, list))
    }

    fn from_sorted(num_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut degrees = vec![0.0; num_nodes];
        let mut counts = vec![0usize; num_nodes + 1];
        for &(i, j, w) in &edges {
            degrees[i] += w;
            degrees[j] += w;
            counts[i + 1] += 1;
            counts[j + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let mut neighbors = vec![(0, 0.0); offsets[num_nodes]];
        for &(i, j, w) in &edges {
            neighbors[fill[i]] = (j, w);
            fill[i] += 1;
            neighbors[fill[j]] = (i, w);
            fill[j] += 1;
        }
        for i in 0..num_nodes {
            neighbors[offsets[i]..offsets[i + 1]].sort_by_key(|&(n, _)| n);
        }
        Self {
            num_nodes,
            edges,
            degrees,
            offsets,
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// `d_i = sum_j W_ij`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Neighbors of `node` with edge weights, sorted by neighbor id.
    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        let row = self.neighbors(a);
        row.binary_search_by_key(&b, |&(n, _)| n)
            .map(|p| row[p].1)
            .unwrap_or(0.0)
    }

    /// Keeps only edges whose endpoints both satisfy `keep`.
    pub fn filter_nodes(&self, keep: impl Fn(usize) -> bool) -> Self {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(i, j, _)| keep(i) && keep(j))
            .collect();
        Self::from_sorted(self.num_nodes, edges)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(i, j, v) in &self.edges {
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
        w
    }

    /// Writes `i j w` lines sorted by `(i, j)`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for &(i, j, w) in &self.edges {
            writeln!(out, "{i} {j} {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrization {
    /// `W_sym = max(W, W^T)`.
    #[default]
    Max,
    /// `W_sym = (W + W^T) / 2`.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub k: usize,
    pub gamma: f64,
    pub symmetrization: Symmetrization,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            k: 10,
            gamma: 1.0,
            symmetrization: Symmetrization::Max,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(NgcError::invalid("k", "must be at least 1"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(NgcError::invalid("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn check_knn_input(z: &Array2<f64>, k: usize) -> Result<()> {
    let n = z.nrows();
    if k == 0 {
        return Err(NgcError::invalid("k", "must be at least 1"));
    }
    if k >= n {
        return Err(NgcError::invalid("k", format!("k = {k} must be smaller than the node count {n}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(NgcError::NonFinite("embeddings"));
    }
    Ok(())
}

/// For every row `j`, the `k` rows `i != j` with the largest `z_i . z_j`,
/// most similar first. Equal similarities go to the smaller index.
pub fn knn_indices(z: &Array2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    check_knn_input(z, k)?;
    Ok(knn_scored(z, k)
        .into_iter()
        .map(|row| row.into_iter().map(|(i, _)| i).collect())
        .collect())
}

fn knn_scored(z: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = z.nrows();
    let gram = z.dot(&z.t());
    let by_similarity = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
    };
    (0..n)
        .map(|j| {
            let mut cand: Vec<(usize, f64)> = (0..n).filter(|&i| i != j).map(|i| (i, gram[[i, j]])).collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_similarity);
                cand.truncate(k);
            }
            cand.sort_by(by_similarity);
            cand
        })
        .collect()
}

/// Builds the k-NN graph: `w_ij = max(z_i . z_j, 0)^gamma` whenever `z_i`
/// is among the k nearest neighbors of `z_j`, symmetrized per
/// `params.symmetrization`. Zero weights produce no edge.
pub fn build_knn_graph(z: &Array2<f64>, params: &GraphParams) -> Result<SparseGraph> {
    params.validate()?;
    check_knn_input(z, params.k)?;
    let n = z.nrows();
    // (min, max) -> (weight as neighbor of max, weight as neighbor of min)
    let mut pairs: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (j, row) in knn_scored(z, params.k).into_iter().enumerate() {
        for (i, dot) in row {
            // Non-positive similarity is cut by the hinge before the power,
            // so gamma = 0 does not resurrect it.
            if dot <= 0.0 {
                continue;
            }
            let w = dot.powf(params.gamma);
            let entry = pairs.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
            if i < j {
                entry.0 = w;
            } else {
                entry.1 = w;
            }
        }
    }
    let edges = pairs
        .into_iter()
        .map(|((a, b), (w1, w2))| {
            let w = match params.symmetrization {
                Symmetrization::Max => w1.max(w2),
                Symmetrization::Mean => 0.5 * (w1 + w2),
            };
            (a, b, w)
        })
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    Ok(SparseGraph::from_sorted(n, edges))
}

/// Drops every edge with an endpoint whose `keep` flag is false. Node
/// count is unchanged; removed nodes become isolated.
pub fn refine_graph(graph: &SparseGraph, keep: &[bool]) -> Result<SparseGraph> {
    if keep.len() != graph.num_nodes() {
        return Err(NgcError::shape("refine_graph keep", graph.num_nodes(), keep.len()));
    }
    Ok(graph.filter_nodes(|i| keep[i]))
}
