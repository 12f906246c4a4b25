//! Cross-entropy and the two contrastive objectives, each returning its
//! value together with the analytic gradient.
//!
//! Contrastive batches hold `2n` unit-norm embeddings: rows `0..n` are the
//! anchor views `I`, rows `n..2n` the second views `I'`, and row `i + n` is
//! the partner `j(i)` of anchor `i`. The denominator set of anchor `i` is
//! `A(i) = (I \ {i}) ∪ I'`. Anchors range over `I` only.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{NgcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    pub tau1: f64,
    pub tau2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub jitter_sigma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            tau1: 0.3,
            tau2: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            jitter_sigma: 0.1,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(t.is_finite() && t > 0.0) {
                return Err(NgcError::invalid(name, format!("temperature must be finite and > 0, got {t}")));
            }
        }
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(NgcError::invalid(name, format!("must be finite and >= 0, got {l}")));
            }
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(NgcError::invalid("jitter_sigma", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Embeddings and labels for one contrastive batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    /// `2n x D_P`, unit-norm rows.
    pub z: Array2<f64>,
    /// Pseudo-label per row (views copy their anchor's label).
    pub labels: Vec<usize>,
    /// Selection indicator per row.
    pub selected: Vec<bool>,
}

impl ContrastiveBatch {
    /// Pairs anchor rows with view rows; labels and indicators are given
    /// per anchor and copied to the views.
    pub fn from_views(anchors: ArrayView2<f64>, views: ArrayView2<f64>, labels: &[usize], selected: &[bool]) -> Result<Self> {
        if anchors.dim() != views.dim() {
            return Err(NgcError::shape(
                "contrastive views",
                format!("{:?}", anchors.dim()),
                format!("{:?}", views.dim()),
            ));
        }
        let n = anchors.nrows();
        if labels.len() != n || selected.len() != n {
            return Err(NgcError::shape("contrastive labels", n, labels.len().min(selected.len())));
        }
        let z = ndarray::concatenate(Axis(0), &[anchors, views]).expect("same width");
        Ok(Self {
            z,
            labels: labels.iter().chain(labels).copied().collect(),
            selected: selected.iter().chain(selected).copied().collect(),
        })
    }

    /// Number of anchors `|I|`.
    pub fn anchors(&self) -> usize {
        self.z.nrows() / 2
    }

    fn check(&self) -> Result<()> {
        let rows = self.z.nrows();
        if rows == 0 {
            return Err(NgcError::EmptyBatch);
        }
        if !rows.is_multiple_of(2) {
            return Err(NgcError::shape("contrastive batch rows", "an even count", rows));
        }
        if self.labels.len() != rows || self.selected.len() != rows {
            return Err(NgcError::shape("contrastive batch labels", rows, self.labels.len()));
        }
        Ok(())
    }
}

/// Accumulates one anchor's term
/// `-(1/|P|) sum_{p in P} log softmax_{a in A(i)}(z_i . z_a / tau)[p]`
/// and its gradient.
fn anchor_term(z: &Array2<f64>, gram: &Array2<f64>, i: usize, positives: &[usize], tau: f64, grad: &mut Array2<f64>) -> f64 {
    // A(i) is every row of the batch except the anchor itself.
    let logits: Vec<(usize, f64)> = (0..z.nrows())
        .filter(|&a| a != i)
        .map(|a| (a, gram[[i, a]] / tau))
        .collect();
    let max = logits.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&(_, l)| (l - max).exp()).sum();
    let log_denominator = max + sum_exp.ln();

    let weight = 1.0 / positives.len() as f64;
    let mut loss = 0.0;
    for &p in positives {
        loss -= weight * (gram[[i, p]] / tau - log_denominator);
    }

    // d/dz_i = (sum_a softmax_a z_a - mean_p z_p) / tau
    // d/dz_a += softmax_a z_i / tau,  d/dz_p -= z_i / (|P| tau)
    let zi = z.row(i).to_owned();
    for &(a, l) in &logits {
        let soft = (l - max).exp() / sum_exp;
        grad.row_mut(i).scaled_add(soft / tau, &z.row(a));
        grad.row_mut(a).scaled_add(soft / tau, &zi);
    }
    for &p in positives {
        grad.row_mut(i).scaled_add(-weight / tau, &z.row(p));
        grad.row_mut(p).scaled_add(-weight / tau, &zi);
    }
    loss
}

/// Instance-level loss
/// `-sum_{i in I} log( exp(z_i . z_j(i) / tau) / sum_{a in A(i)} exp(z_i . z_a / tau) )`.
/// Returns the loss and its gradient with respect to every row of `z`.
pub fn instance_contrastive_loss(batch: &ContrastiveBatch, tau: f64) -> Result<(f64, Array2<f64>)> {
    batch.check()?;
    let n = batch.anchors();
    let gram = batch.z.dot(&batch.z.t());
    let mut grad = Array2::zeros(batch.z.dim());
    let mut loss = 0.0;
    for i in 0..n {
        loss += anchor_term(&batch.z, &gram, i, &[i + n], tau, &mut grad);
    }
    Ok((loss, grad))
}

/// Subgraph-level loss: like the instance loss but the positives of
/// anchor `i` are `P(i) = {p in A(i) : label_p = label_i, g_p = g_i = 1}`,
/// averaged with weight `1/|P(i)|`. Anchors with no positives contribute 0.
pub fn subgraph_contrastive_loss(batch: &ContrastiveBatch, tau: f64) -> Result<(f64, Array2<f64>)> {
    batch.check()?;
    let n = batch.anchors();
    let gram = batch.z.dot(&batch.z.t());
    let mut grad = Array2::zeros(batch.z.dim());
    let mut loss = 0.0;
    for i in 0..n {
        if !batch.selected[i] {
            continue;
        }
        let positives: Vec<usize> = (0..2 * n)
            .filter(|&p| p != i && batch.selected[p] && batch.labels[p] == batch.labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        loss += anchor_term(&batch.z, &gram, i, &positives, tau, &mut grad);
    }
    Ok((loss, grad))
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean negative log-softmax over rows with `selected[i]`; zero (with a
/// zero gradient) when nothing is selected.
pub fn cross_entropy_loss(logits: &Array2<f64>, labels: &[usize], selected: &[bool]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if labels.len() != n || selected.len() != n {
        return Err(NgcError::shape("cross_entropy labels", n, labels.len().min(selected.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(NgcError::LabelOutOfRange {
            label: bad as i64,
            num_classes: logits.ncols(),
            line: None,
        });
    }
    let count = selected.iter().filter(|&&s| s).count();
    let mut grad = Array2::zeros(logits.dim());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let probs = softmax(logits);
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for i in (0..n).filter(|&i| selected[i]) {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]];
        let mut g = grad.row_mut(i);
        g.assign(&probs.row(i));
        g[labels[i]] -= 1.0;
        g.mapv_inplace(|v| v * scale);
    }
    Ok((loss * scale, grad))
}

/// Backpropagates through `z = u / ||u||` row-wise:
/// `dL/du = (g - z (z . g)) / ||u||`. Zero rows get a zero gradient.
pub fn normalize_backward(raw: &Array2<f64>, z: &Array2<f64>, grad_z: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(raw.dim());
    for i in 0..raw.nrows() {
        let norm = raw.row(i).dot(&raw.row(i)).sqrt();
        if norm == 0.0 {
            continue;
        }
        let proj = z.row(i).dot(&grad_z.row(i));
        let mut o = out.row_mut(i);
        o.assign(&grad_z.row(i));
        o.scaled_add(-proj, &z.row(i));
        o.mapv_inplace(|v| v / norm);
    }
    out
}

/// Loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub instance: f64,
    pub subgraph: f64,
}

impl LossBreakdown {
    /// `L = L_ce + lambda1 L_inst + lambda2 L_subgraph`.
    pub fn total(&self, params: &LossParams) -> f64 {
        total_loss(self.cross_entropy, self.instance, self.subgraph, params)
    }
}

pub fn total_loss(cross_entropy: f64, instance: f64, subgraph: f64, params: &LossParams) -> f64 {
    cross_entropy + params.lambda1 * instance + params.lambda2 * subgraph
}
