//! Class prototypes and prototype-similarity OOD detection.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::dataset::unit;
use crate::error::{NgcError, Result};
use crate::model::ToyModel;

/// One unit-norm mean embedding per class. Classes without selected
/// support carry a zero row and are skipped when scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    vectors: Array2<f64>,
    support: Vec<usize>,
}

impl Prototypes {
    pub fn from_parts(vectors: Array2<f64>, support: Vec<usize>) -> Result<Self> {
        if support.len() != vectors.nrows() {
            return Err(NgcError::shape("prototype support", vectors.nrows(), support.len()));
        }
        if support.iter().all(|&s| s == 0) {
            return Err(NgcError::NoPrototypes);
        }
        Ok(Self { vectors, support })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_valid(&self, class: usize) -> bool {
        self.support[class] > 0
    }
}

/// `c_k = normalize(mean of z_i over i with pseudo-label k and g_i = 1)`.
pub fn compute_prototypes(z: &Array2<f64>, pseudo_labels: &[usize], selected: &[bool], num_classes: usize) -> Result<Prototypes> {
    let n = z.nrows();
    if pseudo_labels.len() != n || selected.len() != n {
        return Err(NgcError::shape("compute_prototypes labels", n, pseudo_labels.len().min(selected.len())));
    }
    let mut sums = Array2::zeros((num_classes, z.ncols()));
    let mut support = vec![0usize; num_classes];
    for i in (0..n).filter(|&i| selected[i]) {
        let k = pseudo_labels[i];
        if k >= num_classes {
            return Err(NgcError::LabelOutOfRange {
                label: k as i64,
                num_classes,
                line: None,
            });
        }
        sums.row_mut(k).scaled_add(1.0, &z.row(i));
        support[k] += 1;
    }
    for (k, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
        if support[k] > 0 {
            let mean = row.mapv(|v| v / support[k] as f64);
            row.assign(&unit(mean.view()));
        }
    }
    Prototypes::from_parts(sums, support)
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Maximum cosine similarity to any valid prototype.
pub fn ood_score(z: ArrayView1<f64>, prototypes: &Prototypes) -> Result<f64> {
    if z.len() != prototypes.dim() {
        return Err(NgcError::shape("ood_score embedding", prototypes.dim(), z.len()));
    }
    (0..prototypes.num_classes())
        .filter(|&k| prototypes.is_valid(k))
        .map(|k| cosine(z, prototypes.vectors.row(k)))
        .reduce(f64::max)
        .ok_or(NgcError::NoPrototypes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ind(usize),
    Ood,
}

impl Verdict {
    pub fn class(self) -> Option<usize> {
        match self {
            Verdict::Ind(c) => Some(c),
            Verdict::Ood => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionDecision {
    pub score: f64,
    pub verdict: Verdict,
    pub zeta: f64,
    /// Classifier argmax, reported even when the sample is rejected.
    pub predicted_class: usize,
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&zeta) {
        return Err(NgcError::invalid("zeta", format!("must lie in [-1, 1], got {zeta}")));
    }
    Ok(())
}

/// Rejects when the score is strictly below `zeta`; otherwise predicts
/// the classifier's argmax.
pub fn decide(score: f64, predicted_class: usize, zeta: f64) -> DetectionDecision {
    let verdict = if score < zeta {
        Verdict::Ood
    } else {
        Verdict::Ind(predicted_class)
    };
    DetectionDecision {
        score,
        verdict,
        zeta,
        predicted_class,
    }
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

pub fn classify_or_reject(x: ArrayView1<f64>, model: &ToyModel, prototypes: &Prototypes, zeta: f64) -> Result<DetectionDecision> {
    let batch = x.to_owned().insert_axis(Axis(0));
    Ok(detect(&batch, model, prototypes, zeta)?.remove(0))
}

/// Batched [`classify_or_reject`].
pub fn detect(x: &Array2<f64>, model: &ToyModel, prototypes: &Prototypes, zeta: f64) -> Result<Vec<DetectionDecision>> {
    check_zeta(zeta)?;
    let fwd = model.forward(x)?;
    fwd.z
        .axis_iter(Axis(0))
        .zip(fwd.logits.axis_iter(Axis(0)))
        .map(|(z, logits)| Ok(decide(ood_score(z, prototypes)?, argmax(logits), zeta)))
        .collect()
}

/// Scores for a batch of unit embeddings.
pub fn score_all(z: &Array2<f64>, prototypes: &Prototypes) -> Result<Array1<f64>> {
    z.axis_iter(Axis(0)).map(|row| ood_score(row, prototypes)).collect()
}
