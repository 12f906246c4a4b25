//! Clean-sample selection: confidence pruning followed by the largest
//! connected component of every class subgraph.

use std::fmt::Write as _;

use crate::error::{NgcError, Result};
use crate::graph::{refine_graph, SparseGraph};
use crate::propagation::{hard_pseudo_labels, SoftLabels};

/// Union-find with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

/// Outcome of one round of subgraph selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    selected: Vec<bool>,
    pseudo_labels: Vec<usize>,
    clean_set: Vec<usize>,
    per_class_lcc: Vec<Vec<usize>>,
    confident: Vec<bool>,
}

impl SelectionState {
    /// Nothing selected; every pseudo-label is 0. Used before the first
    /// epoch so the label matrix comes entirely from the ensemble.
    pub fn empty(n: usize) -> Self {
        Self {
            selected: vec![false; n],
            pseudo_labels: vec![0; n],
            clean_set: Vec::new(),
            per_class_lcc: Vec::new(),
            confident: vec![false; n],
        }
    }

    /// A state with explicit indicators and labels; the clean set is the
    /// selected nodes and the per-class sets group them by label.
    pub fn from_selected(selected: Vec<bool>, pseudo_labels: Vec<usize>, num_classes: usize) -> Self {
        assert_eq!(selected.len(), pseudo_labels.len());
        let clean_set: Vec<usize> = (0..selected.len()).filter(|&i| selected[i]).collect();
        let mut per_class_lcc = vec![Vec::new(); num_classes];
        for &i in &clean_set {
            per_class_lcc[pseudo_labels[i]].push(i);
        }
        Self {
            confident: selected.clone(),
            selected,
            pseudo_labels,
            clean_set,
            per_class_lcc,
        }
    }

    /// Every sample selected under its given label (the warm-up view).
    pub fn all(given_labels: &[usize], num_classes: usize) -> Self {
        Self::from_selected(vec![true; given_labels.len()], given_labels.to_vec(), num_classes)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.selected[i]
    }

    /// Final indicators `g`.
    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    /// Union of the per-class components, ascending.
    pub fn clean_set(&self) -> &[usize] {
        &self.clean_set
    }

    pub fn per_class_lcc(&self) -> &[Vec<usize>] {
        &self.per_class_lcc
    }

    /// Nodes that survived confidence pruning.
    pub fn confident(&self) -> &[bool] {
        &self.confident
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&g| g).count()
    }

    /// CSV with columns `id,g,pseudo_label,in_lcc`.
    pub fn to_csv(&self, ids: &[u64]) -> String {
        let mut in_lcc = vec![false; self.len()];
        for &i in &self.clean_set {
            in_lcc[i] = true;
        }
        let mut out = String::from("id,g,pseudo_label,in_lcc\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                ids[i],
                self.selected[i] as u8,
                self.pseudo_labels[i],
                in_lcc[i] as u8
            );
        }
        out
    }
}

/// Result of confidence pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSelection {
    /// Node survives pruning.
    pub keep: Vec<bool>,
    /// Given label scored above `1/K`; its pseudo-label is pinned to the
    /// given label.
    pub trusts_given: Vec<bool>,
    /// Best score exceeded `eta`.
    pub above_eta: Vec<bool>,
}

impl ConfidenceSelection {
    /// Argmax pseudo-labels with trusted nodes reset to their given label.
    pub fn pseudo_labels(&self, soft: &SoftLabels, given_labels: &[usize]) -> Vec<usize> {
        let mut labels = hard_pseudo_labels(soft);
        for (i, l) in labels.iter_mut().enumerate() {
            if self.trusts_given[i] {
                *l = given_labels[i];
            }
        }
        labels
    }
}

/// Keeps node `i` when `Y~[i, y_i] > 1/K`, otherwise when
/// `max_k Y~[i, k] > eta`. Both comparisons are strict.
pub fn confidence_select(
    soft: &SoftLabels,
    given_labels: &[usize],
    eta: f64,
    num_classes: usize,
) -> Result<ConfidenceSelection> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(NgcError::invalid("eta", format!("must lie in [0, 1], got {eta}")));
    }
    let n = soft.num_nodes();
    if given_labels.len() != n {
        return Err(NgcError::shape("confidence_select labels", n, given_labels.len()));
    }
    if soft.num_classes() != num_classes {
        return Err(NgcError::shape("confidence_select classes", num_classes, soft.num_classes()));
    }
    let uniform = 1.0 / num_classes as f64;
    let values = soft.values();
    let mut out = ConfidenceSelection {
        keep: vec![false; n],
        trusts_given: vec![false; n],
        above_eta: vec![false; n],
    };
    for i in 0..n {
        let row = values.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.above_eta[i] = max > eta;
        out.trusts_given[i] = row[given_labels[i]] > uniform;
        out.keep[i] = out.trusts_given[i] || out.above_eta[i];
    }
    Ok(out)
}

/// Drops every node whose pseudo-label is not `class` along with its edges.
pub fn class_subgraph(graph: &SparseGraph, pseudo_labels: &[usize], class: usize) -> SparseGraph {
    graph.filter_nodes(|i| pseudo_labels[i] == class)
}

/// Largest connected component among `candidates` using only edges with
/// both endpoints in the candidate set. Equal sizes go to the component
/// holding the smallest node id. Returned ids are ascending.
pub fn largest_connected_component(graph: &SparseGraph, candidates: &[usize]) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let n = graph.num_nodes();
    let mut member = vec![false; n];
    for &c in candidates {
        member[c] = true;
    }
    let mut sets = DisjointSet::new(n);
    for &(i, j, _) in graph.edges() {
        if member[i] && member[j] {
            sets.union(i, j);
        }
    }
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut size = vec![0usize; n];
    for &c in &sorted {
        let r = sets.find(c);
        size[r] += 1;
    }
    // Scanning ascending, the first node seen of a root is its smallest id,
    // so a strict `>` keeps the earliest component on ties.
    let mut best: Option<(usize, usize)> = None;
    for &c in &sorted {
        let r = sets.find(c);
        if best.is_none_or(|(_, s)| size[r] > s) {
            best = Some((r, size[r]));
        }
    }
    let (root, _) = best.expect("candidates non-empty");
    sorted.into_iter().filter(|&c| sets.find(c) == root).collect()
}

/// Confidence pruning, graph refinement, per-class LCC, and the combined
/// indicator:
///
/// - trusted nodes (`Y~[i, y_i] > 1/K`) are selected iff they are in `S`;
/// - other nodes need `max_k Y~[i, k] > eta` and membership in `S`.
pub fn subgraph_select(
    graph: &SparseGraph,
    soft: &SoftLabels,
    given_labels: &[usize],
    eta: f64,
    num_classes: usize,
) -> Result<SelectionState> {
    let n = graph.num_nodes();
    if soft.num_nodes() != n {
        return Err(NgcError::shape("subgraph_select soft labels", n, soft.num_nodes()));
    }
    let conf = confidence_select(soft, given_labels, eta, num_classes)?;
    let pseudo_labels = conf.pseudo_labels(soft, given_labels);
    let refined = refine_graph(graph, &conf.keep)?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for i in (0..n).filter(|&i| conf.keep[i]) {
        by_class[pseudo_labels[i]].push(i);
    }
    let per_class_lcc: Vec<Vec<usize>> = by_class
        .iter()
        .enumerate()
        .map(|(k, cand)| largest_connected_component(&class_subgraph(&refined, &pseudo_labels, k), cand))
        .collect();

    let mut in_s = vec![false; n];
    for &i in per_class_lcc.iter().flatten() {
        in_s[i] = true;
    }
    let clean_set: Vec<usize> = (0..n).filter(|&i| in_s[i]).collect();
    let selected = (0..n)
        .map(|i| {
            if conf.trusts_given[i] {
                in_s[i]
            } else {
                conf.above_eta[i] && in_s[i]
            }
        })
        .collect();

    Ok(SelectionState {
        selected,
        pseudo_labels,
        clean_set,
        per_class_lcc,
        confident: conf.keep,
    })
}
