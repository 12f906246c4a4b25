//! Soft pseudo-label propagation over the k-NN graph.
//!
//! The propagated labels minimize
//!
//! ```text
//! J(Y~) = alpha/2 * sum_ij W_ij || y~_i / sqrt(d_i) - y~_j / sqrt(d_j) ||^2
//!         + (1 - alpha) * || Y - Y~ ||_F^2
//! ```
//!
//! whose stationarity condition is `(I - alpha S) Y~ = (1 - alpha) Y`
//! with `S = D^{-1/2} W D^{-1/2}`. Each class column is solved with
//! conjugate gradient.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cg::{conjugate_gradient, LinearOperator};
use crate::error::{NgcError, Result};
use crate::graph::SparseGraph;
use crate::selection::SelectionState;

/// Per-node soft class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    values: Array2<f64>,
    normalized: bool,
    /// Rows that summed to zero before normalization and were set uniform.
    degenerate_rows: Vec<usize>,
}

impl SoftLabels {
    /// Wraps raw (unnormalized) scores.
    pub fn raw(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NgcError::NonFinite("soft labels"));
        }
        Ok(Self {
            values,
            normalized: false,
            degenerate_rows: Vec::new(),
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate_rows
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationParams {
    pub alpha: f64,
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            cg_tolerance: 1e-6,
            cg_max_iters: 500,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(NgcError::invalid("alpha", format!("must lie strictly inside (0, 1), got {}", self.alpha)));
        }
        if !(self.cg_tolerance.is_finite() && self.cg_tolerance > 0.0) {
            return Err(NgcError::invalid("cg_tolerance", "must be finite and > 0"));
        }
        if self.cg_max_iters == 0 {
            return Err(NgcError::invalid("cg_max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Temporal ensemble

/// Exponential moving average of model softmax outputs with bias
/// correction.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEnsemble {
    accumulated: Array2<f64>,
    momentum: f64,
    step: u32,
}

impl TemporalEnsemble {
    pub fn new(num_nodes: usize, num_classes: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(NgcError::invalid("ensemble_momentum", format!("must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            accumulated: Array2::zeros((num_nodes, num_classes)),
            momentum,
            step: 0,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    /// `acc <- beta * acc + (1 - beta) * predictions`.
    pub fn update(&mut self, predictions: &Array2<f64>) -> Result<()> {
        if predictions.dim() != self.accumulated.dim() {
            return Err(NgcError::shape(
                "temporal ensemble update",
                format!("{:?}", self.accumulated.dim()),
                format!("{:?}", predictions.dim()),
            ));
        }
        let beta = self.momentum;
        self.accumulated.zip_mut_with(predictions, |a, &p| *a = beta * *a + (1.0 - beta) * p);
        self.step += 1;
        Ok(())
    }

    /// Bias-corrected averages `acc / (1 - beta^t)`; all zeros before the
    /// first update.
    pub fn predictions(&self) -> Array2<f64> {
        if self.step == 0 {
            return self.accumulated.clone();
        }
        let correction = 1.0 - self.momentum.powi(self.step as i32);
        self.accumulated.mapv(|a| a / correction)
    }
}

// ---------------------------------------------------------------------------
// Label matrix and solve

/// Row `i` is the one-hot pseudo-label when node `i` is selected, otherwise the
/// temporal-ensemble prediction.
pub fn init_label_matrix(
    given_labels: &[usize],
    num_classes: usize,
    selection: &SelectionState,
    ensemble: &TemporalEnsemble,
) -> Result<Array2<f64>> {
    let n = given_labels.len();
    if selection.len() != n {
        return Err(NgcError::shape("init_label_matrix selection", n, selection.len()));
    }
    let mut y = ensemble.predictions();
    if y.dim() != (n, num_classes) {
        return Err(NgcError::shape(
            "init_label_matrix ensemble",
            format!("({n}, {num_classes})"),
            format!("{:?}", y.dim()),
        ));
    }
    for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        if selection.is_selected(i) {
            row.fill(0.0);
            row[selection.pseudo_labels()[i]] = 1.0;
        }
    }
    Ok(y)
}

/// `x -> (I - alpha S) x` restricted to nodes with nonzero degree.
/// Isolated nodes decouple (`S` row is zero) and are solved in closed form.
struct PropagationOperator<'a> {
    graph: &'a SparseGraph,
    inv_sqrt_degree: Vec<f64>,
    active: Vec<usize>,
    local: Vec<usize>,
    alpha: f64,
}

impl<'a> PropagationOperator<'a> {
    fn new(graph: &'a SparseGraph, alpha: f64) -> Self {
        let inv_sqrt_degree: Vec<f64> = graph
            .degrees()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let active: Vec<usize> = (0..graph.num_nodes()).filter(|&i| graph.degrees()[i] > 0.0).collect();
        let mut local = vec![usize::MAX; graph.num_nodes()];
        for (l, &g) in active.iter().enumerate() {
            local[g] = l;
        }
        Self {
            graph,
            inv_sqrt_degree,
            active,
            local,
            alpha,
        }
    }
}

impl LinearOperator for PropagationOperator<'_> {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate() {
            let i = self.active[l];
            let sx: f64 = self
                .graph
                .neighbors(i)
                .iter()
                .map(|&(j, w)| w * self.inv_sqrt_degree[j] * x[self.local[j]])
                .sum();
            *o = x[l] - self.alpha * self.inv_sqrt_degree[i] * sx;
        }
    }
}

/// Dense `S = D^{-1/2} W D^{-1/2}` with zero rows for isolated nodes.
pub fn normalized_adjacency(graph: &SparseGraph) -> Array2<f64> {
    let op = PropagationOperator::new(graph, 1.0);
    let mut s = Array2::zeros((graph.num_nodes(), graph.num_nodes()));
    for &(i, j, w) in graph.edges() {
        let v = w * op.inv_sqrt_degree[i] * op.inv_sqrt_degree[j];
        s[[i, j]] = v;
        s[[j, i]] = v;
    }
    s
}

/// Solves `(I - alpha S) Y~ = (1 - alpha) Y` column by column.
pub fn propagate(graph: &SparseGraph, y: &Array2<f64>, params: &PropagationParams) -> Result<SoftLabels> {
    params.validate()?;
    let n = graph.num_nodes();
    if y.nrows() != n {
        return Err(NgcError::shape("propagate label matrix rows", n, y.nrows()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NgcError::NonFinite("label matrix"));
    }
    let op = PropagationOperator::new(graph, params.alpha);
    let mut out = y.mapv(|v| (1.0 - params.alpha) * v);
    if op.active.is_empty() {
        return SoftLabels::raw(out);
    }
    for (c, column) in y.axis_iter(Axis(1)).enumerate() {
        let rhs: Vec<f64> = op.active.iter().map(|&i| (1.0 - params.alpha) * column[i]).collect();
        let solved = conjugate_gradient(&op, &rhs, params.cg_tolerance, params.cg_max_iters);
        if !solved.converged {
            return Err(NgcError::SolverDiverged {
                column: c,
                iterations: solved.iterations,
                residual: solved.residual_norm,
            });
        }
        for (l, &i) in op.active.iter().enumerate() {
            out[[i, c]] = solved.solution[l];
        }
    }
    SoftLabels::raw(out)
}

/// Clamps negatives to zero and rescales every row to sum to one. Rows
/// with zero mass become uniform and are recorded as degenerate.
pub fn normalize_soft_labels(soft: &SoftLabels) -> SoftLabels {
    let k = soft.num_classes();
    let mut values = soft.values.mapv(|v| v.max(0.0));
    let mut degenerate_rows = Vec::new();
    for (i, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let sum: f64 = row.sum();
        if sum > 0.0 && sum.is_finite() {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(1.0 / k as f64);
            degenerate_rows.push(i);
        }
    }
    SoftLabels {
        values,
        normalized: true,
        degenerate_rows,
    }
}

/// Row-wise argmax; ties go to the smallest class index.
pub fn hard_pseudo_labels(soft: &SoftLabels) -> Vec<usize> {
    soft.values
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ensemble_first_update_is_exact() {
        let p = array![[0.2, 0.8], [0.5, 0.5]];
        let mut te = TemporalEnsemble::new(2, 2, 0.6).unwrap();
        te.update(&p).unwrap();
        let got = te.predictions();
        for (a, b) in got.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ensemble_zero_momentum_tracks_latest() {
        let mut te = TemporalEnsemble::new(1, 2, 0.0).unwrap();
        te.update(&array![[0.1, 0.9]]).unwrap();
        te.update(&array![[0.7, 0.3]]).unwrap();
        assert_eq!(te.predictions(), array![[0.7, 0.3]]);
    }

    #[test]
    fn ensemble_constant_input_is_fixed_point() {
        let p = array![[0.25, 0.75]];
        let mut te = TemporalEnsemble::new(1, 2, 0.9).unwrap();
        for _ in 0..50 {
            te.update(&p).unwrap();
            for (a, b) in te.predictions().iter().zip(p.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(te.update(&array![[1.0, 0.0, 0.0]]).is_err());
        assert!(TemporalEnsemble::new(1, 2, 1.0).is_err());
    }

    fn ensemble_with(p: &Array2<f64>) -> TemporalEnsemble {
        let mut te = TemporalEnsemble::new(p.nrows(), p.ncols(), 0.6).unwrap();
        te.update(p).unwrap();
        te
    }

    #[test]
    fn label_matrix_rows() {
        let p = array![[0.3, 0.7], [0.6, 0.4], [0.5, 0.5]];
        let te = ensemble_with(&p);
        let given = [1, 0, 0];

        let all = SelectionState::from_selected(vec![true; 3], given.to_vec(), 2);
        assert_eq!(init_label_matrix(&given, 2, &all, &te).unwrap(), array![[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]);

        let none = SelectionState::empty(3);
        let y = init_label_matrix(&given, 2, &none, &te).unwrap();
        for (a, b) in y.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-15);
        }

        let mixed = SelectionState::from_selected(vec![true, false, true], given.to_vec(), 2);
        let y = init_label_matrix(&given, 2, &mixed, &te).unwrap();
        assert_eq!(y.row(0).to_vec(), vec![0.0, 1.0]);
        assert!((y[[1, 0]] - 0.6).abs() < 1e-15 && (y[[1, 1]] - 0.4).abs() < 1e-15);
        assert_eq!(y.row(2).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn edgeless_graph_halves_labels() {
        let g = SparseGraph::empty(3);
        let y = array![[1.0, 0.0], [0.2, 0.8], [0.5, 0.5]];
        let out = propagate(&g, &y, &PropagationParams::default()).unwrap();
        assert_eq!(out.values(), &(&y * 0.5));
        assert!(!out.is_normalized());
    }

    #[test]
    fn two_node_closed_form() {
        // (I - 0.5 S) with S = [[0,1],[1,0]] inverted times 0.5 I.
        let g = SparseGraph::from_edges(2, [(0, 1, 1.0)]).unwrap();
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let params = PropagationParams {
            cg_tolerance: 1e-12,
            ..Default::default()
        };
        let out = propagate(&g, &y, &params).unwrap();
        let expected = array![[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        for (a, b) in out.values().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_keeps_scaled_prior() {
        let g = SparseGraph::from_edges(3, [(0, 1, 0.7)]).unwrap();
        let y = array![[1.0, 0.0], [0.0, 1.0], [0.3, 0.7]];
        let out = propagate(&g, &y, &PropagationParams::default()).unwrap();
        assert_eq!(out.values().row(2).to_vec(), vec![0.15, 0.35]);
    }

    #[test]
    fn propagate_errors() {
        let g = SparseGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let y = array![[1.0, 0.0], [0.0, 1.0], [0.3, 0.7]];
        let bad_alpha = PropagationParams {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(propagate(&g, &y, &bad_alpha).is_err());
        let starved = PropagationParams {
            cg_tolerance: 1e-15,
            cg_max_iters: 1,
            ..Default::default()
        };
        assert!(matches!(propagate(&g, &y, &starved), Err(NgcError::SolverDiverged { .. })));
        assert!(propagate(&g, &array![[1.0, 0.0]], &PropagationParams::default()).is_err());
    }

    #[test]
    fn normalization_cases() {
        let raw = SoftLabels::raw(array![[0.5, 0.5, 0.0], [2.0, 1.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 3.0, 1.0]]).unwrap();
        let out = normalize_soft_labels(&raw);
        assert!(out.is_normalized());
        assert_eq!(out.values().row(0).to_vec(), vec![0.5, 0.5, 0.0]);
        assert_eq!(out.values().row(1).to_vec(), vec![0.5, 0.25, 0.25]);
        assert_eq!(out.values().row(2).to_vec(), vec![1.0 / 3.0; 3]);
        assert_eq!(out.values().row(3).to_vec(), vec![0.0, 0.75, 0.25]);
        assert_eq!(out.degenerate_rows(), &[2]);

        let two = normalize_soft_labels(&SoftLabels::raw(array![[0.0, 0.0]]).unwrap());
        assert_eq!(two.values().row(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(two.degenerate_rows(), &[0]);
    }

    #[test]
    fn argmax_with_ties() {
        let soft = normalize_soft_labels(&SoftLabels::raw(array![[0.1, 0.9], [0.5, 0.5], [0.0, 1.0]]).unwrap());
        assert_eq!(hard_pseudo_labels(&soft), vec![1, 0, 1]);
        let one_hot = SoftLabels::raw(array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(hard_pseudo_labels(&one_hot), vec![0, 2]);
    }
}
