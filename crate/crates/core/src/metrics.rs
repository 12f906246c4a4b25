//! Accuracy, AUROC, open-set F-measure and selection diagnostics.

use serde::{Deserialize, Serialize};

use crate::dataset::Truth;
use crate::error::{NgcError, Result};
use crate::ood::Verdict;
use crate::selection::SelectionState;

/// Fraction of IND samples whose predicted class equals the true class.
/// OOD samples are ignored.
pub fn accuracy(predictions: &[usize], truth: &[Truth]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(NgcError::shape("accuracy", truth.len(), predictions.len()));
    }
    let (mut total, mut correct) = (0usize, 0usize);
    for (p, t) in predictions.iter().zip(truth) {
        if let Truth::Class(c) = *t {
            total += 1;
            correct += (*p == c) as usize;
        }
    }
    if total == 0 {
        return Err(NgcError::Metric("accuracy needs at least one IND sample".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Mann-Whitney AUROC: the fraction of (IND, OOD) pairs where the IND
/// score is higher, counting ties as one half. Higher scores mean "more
/// in-distribution".
pub fn auroc(scores_ind: &[f64], scores_ood: &[f64]) -> Result<f64> {
    if scores_ind.is_empty() || scores_ood.is_empty() {
        return Err(NgcError::Metric("auroc needs both IND and OOD scores".into()));
    }
    if scores_ind.iter().chain(scores_ood).any(|s| s.is_nan()) {
        return Err(NgcError::NonFinite("auroc scores"));
    }
    let mut ood = scores_ood.to_vec();
    ood.sort_by(f64::total_cmp);
    // Twice the U statistic, kept integral so the result is a single
    // rounding of an exact ratio.
    let mut twice_u: u128 = 0;
    for &s in scores_ind {
        let below = ood.partition_point(|&o| o < s);
        let not_above = ood.partition_point(|&o| o <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * scores_ind.len() as u128 * scores_ood.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// Per-class precision / recall / F for the open-set protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

fn f_from_counts(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores {
        precision,
        recall,
        f_measure,
    }
}

/// Per-known-class scores. A rejected IND sample is a false negative for
/// its class; an accepted OOD sample is a false positive for the class it
/// was assigned.
pub fn per_class_scores(verdicts: &[Verdict], truth: &[Truth], num_classes: usize) -> Result<Vec<ClassScores>> {
    if verdicts.len() != truth.len() {
        return Err(NgcError::shape("f_measure", truth.len(), verdicts.len()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (v, t) in verdicts.iter().zip(truth) {
        let predicted = v.class();
        let actual = t.class();
        if let Some(p) = predicted {
            if p >= num_classes {
                return Err(NgcError::LabelOutOfRange {
                    label: p as i64,
                    num_classes,
                    line: None,
                });
            }
        }
        match (predicted, actual) {
            (Some(p), Some(a)) if p == a => tp[p] += 1,
            (p, a) => {
                if let Some(p) = p {
                    fp[p] += 1;
                }
                if let Some(a) = a {
                    fn_[a] += 1;
                }
            }
        }
    }
    Ok((0..num_classes).map(|k| f_from_counts(tp[k], fp[k], fn_[k])).collect())
}

/// Macro-averaged F-measure over the known classes.
pub fn f_measure(verdicts: &[Verdict], truth: &[Truth], num_classes: usize) -> Result<f64> {
    let scores = per_class_scores(verdicts, truth, num_classes)?;
    Ok(scores.iter().map(|s| s.f_measure).sum::<f64>() / num_classes as f64)
}

/// Label noise among selected samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Fraction of selected samples whose training label (pseudo-label)
    /// disagrees with the truth; OOD samples always count as noisy.
    pub noise_rate: f64,
    pub size: usize,
    pub ind_noise_selected: usize,
    pub ood_noise_selected: usize,
}

pub fn selection_report(state: &SelectionState, truth: Option<&[Truth]>) -> Result<SelectionReport> {
    let truth = truth.ok_or_else(|| NgcError::Metric("selection report needs ground truth".into()))?;
    if truth.len() != state.len() {
        return Err(NgcError::shape("selection_report", state.len(), truth.len()));
    }
    let (mut size, mut ind, mut ood) = (0usize, 0usize, 0usize);
    for i in (0..state.len()).filter(|&i| state.is_selected(i)) {
        size += 1;
        match truth[i] {
            Truth::Ood => ood += 1,
            Truth::Class(c) if c != state.pseudo_labels()[i] => ind += 1,
            Truth::Class(_) => {}
        }
    }
    let noise_rate = if size == 0 { 0.0 } else { (ind + ood) as f64 / size as f64 };
    Ok(SelectionReport {
        noise_rate,
        size,
        ind_noise_selected: ind,
        ood_noise_selected: ood,
    })
}

/// Fraction of IND samples whose pseudo-label differs from the truth.
pub fn label_error_rate(pseudo_labels: &[usize], truth: &[Truth]) -> Result<f64> {
    Ok(1.0 - accuracy(pseudo_labels, truth)?)
}

/// Evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auroc: f64,
    pub f_measure: f64,
    pub zeta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_noise_rate: Option<f64>,
    pub per_class: Vec<ClassScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_f_measure: Option<f64>,
}

/// The default sweep grid: `-1.00, -0.99, ..., 1.00`.
pub fn zeta_grid() -> Vec<f64> {
    (-100..=100).map(|i| i as f64 / 100.0).collect()
}

/// F-measure at every threshold of `grid`, recomputing verdicts from the
/// stored scores and predicted classes.
pub fn sweep_zeta(scores: &[f64], predicted: &[usize], truth: &[Truth], num_classes: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != predicted.len() {
        return Err(NgcError::shape("sweep_zeta", scores.len(), predicted.len()));
    }
    grid.iter()
        .map(|&zeta| {
            let verdicts: Vec<Verdict> = scores
                .iter()
                .zip(predicted)
                .map(|(&s, &p)| if s < zeta { Verdict::Ood } else { Verdict::Ind(p) })
                .collect();
            Ok((zeta, f_measure(&verdicts, truth, num_classes)?))
        })
        .collect()
}

/// Best `(zeta, F)` of a sweep; earliest threshold wins ties.
pub fn best_of_sweep(sweep: &[(f64, f64)]) -> Option<(f64, f64)> {
    sweep
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
}
