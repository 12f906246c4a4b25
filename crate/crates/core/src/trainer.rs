//! Warm-up and the per-epoch noisy graph cleaning loop.
//!
//! Each epoch embeds the training set, refreshes the temporal ensemble,
//! rebuilds the k-NN graph, propagates labels, selects clean samples and
//! finally runs minibatch gradient descent on
//! `L_ce + lambda1 L_inst + lambda2 L_subgraph` with two jittered views
//! per sample.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{NgcError, Result};
use crate::graph::{build_knn_graph, GraphParams};
use crate::losses::{
    cross_entropy_loss, instance_contrastive_loss, softmax, subgraph_contrastive_loss, ContrastiveBatch, LossBreakdown,
    LossParams,
};
use crate::metrics::{label_error_rate, selection_report};
use crate::model::{augment_embedding, Gradients, ModelShape, ToyModel};
use crate::ood::{compute_prototypes, Prototypes};
use crate::propagation::{init_label_matrix, normalize_soft_labels, propagate, PropagationParams, TemporalEnsemble};
use crate::selection::{subgraph_select, SelectionState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub graph: GraphParams,
    pub propagation: PropagationParams,
    /// Renormalize propagated scores before thresholding.
    pub normalize_soft_labels: bool,
    pub ensemble_momentum: f64,
    pub eta: f64,
    pub loss: LossParams,
    pub model: ModelShape,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            graph: GraphParams::default(),
            propagation: PropagationParams::default(),
            normalize_soft_labels: true,
            ensemble_momentum: 0.6,
            eta: 0.8,
            loss: LossParams::default(),
            model: ModelShape::default(),
            batch_size: 64,
            learning_rate: 0.05,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.propagation.validate()?;
        self.loss.validate()?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(NgcError::invalid("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.ensemble_momentum) {
            return Err(NgcError::invalid("ensemble_momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(NgcError::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NgcError::invalid("learning_rate", "must be finite and >= 0"));
        }
        if self.model.hidden_dim == 0 || self.model.projection_dim == 0 {
            return Err(NgcError::invalid("model", "hidden_dim and projection_dim must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_inst: f64,
    pub loss_subgraph: f64,
    pub selected_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected_noise_rate: Option<f64>,
    /// Pseudo-label error over IND samples.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_error_rate: Option<f64>,
}

/// Everything that evolves across epochs.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub model: ToyModel,
    pub ensemble: TemporalEnsemble,
    pub selection: SelectionState,
    pub epochs_done: usize,
    rng: ChaCha8Rng,
}

const STREAM_TRAINING: u64 = 10;

impl TrainingState {
    pub fn new(dataset: &Dataset, params: &TrainParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_TRAINING);
        let model = ToyModel::new(dataset.dim(), dataset.num_classes(), params.model, &mut rng)?;
        Ok(Self {
            model,
            ensemble: TemporalEnsemble::new(dataset.len(), dataset.num_classes(), params.ensemble_momentum)?,
            selection: SelectionState::empty(dataset.len()),
            epochs_done: 0,
            rng,
        })
    }

    /// Prototypes from the current model's embeddings of `dataset` and the
    /// current selection. Before any cleaning epoch the selection is empty,
    /// so every sample counts under its given label.
    pub fn prototypes(&self, dataset: &Dataset) -> Result<Prototypes> {
        let fwd = self.model.forward(dataset.embeddings())?;
        let fallback;
        let sel = if self.epochs_done == 0 {
            fallback = SelectionState::all(dataset.given_labels(), dataset.num_classes());
            &fallback
        } else {
            &self.selection
        };
        compute_prototypes(&fwd.z, sel.pseudo_labels(), sel.selected(), dataset.num_classes())
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn accumulate(total: &mut Gradients, g: &Gradients) {
    total.encoder += &g.encoder;
    total.classifier += &g.classifier;
    total.projector += &g.projector;
}

/// Cross-entropy training on every given label; returns the mean loss of
/// each epoch.
pub fn warmup(state: &mut TrainingState, dataset: &Dataset, params: &TrainParams, epochs: usize) -> Result<Vec<f64>> {
    let x = dataset.embeddings();
    let labels = dataset.given_labels();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut sum = 0.0;
        for idx in batches(dataset.len(), params.batch_size, &mut state.rng) {
            let xb = rows(x, &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let fwd = state.model.forward(&xb)?;
            let (ce, g_logits) = cross_entropy_loss(&fwd.logits, &yb, &vec![true; idx.len()])?;
            let grads = state.model.backward(&xb, &fwd, &g_logits, &Array2::zeros(fwd.z.dim()));
            state.model.apply(&grads, params.learning_rate);
            sum += ce * idx.len() as f64;
        }
        curve.push(sum / dataset.len() as f64);
    }
    Ok(curve)
}

/// Graph construction, propagation and selection for the current model.
pub fn clean_labels(state: &mut TrainingState, dataset: &Dataset, params: &TrainParams) -> Result<SelectionState> {
    let fwd = state.model.forward(dataset.embeddings())?;
    state.ensemble.update(&softmax(&fwd.logits))?;
    let graph = build_knn_graph(&fwd.z, &params.graph)?;
    let y = init_label_matrix(dataset.given_labels(), dataset.num_classes(), &state.selection, &state.ensemble)?;
    let mut soft = propagate(&graph, &y, &params.propagation)?;
    if params.normalize_soft_labels {
        soft = normalize_soft_labels(&soft);
    }
    subgraph_select(&graph, &soft, dataset.given_labels(), params.eta, dataset.num_classes())
}

/// One epoch of noisy graph cleaning followed by gradient descent on the
/// selected samples.
pub fn train_epoch(state: &mut TrainingState, dataset: &Dataset, params: &TrainParams) -> Result<EpochReport> {
    let epoch = state.epochs_done + 1;
    let wrap = |e: NgcError| NgcError::Epoch {
        epoch,
        source: Box::new(e),
    };
    let selection = clean_labels(state, dataset, params).map_err(wrap)?;

    let x = dataset.embeddings();
    let labels = selection.pseudo_labels();
    let selected = selection.selected();
    let lp = &params.loss;
    let mut sums = LossBreakdown::default();
    let all = batches(dataset.len(), params.batch_size, &mut state.rng);
    for idx in &all {
        let n = idx.len();
        let xb = rows(x, idx);
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let gb: Vec<bool> = idx.iter().map(|&i| selected[i]).collect();
        let v1 = augment_embedding(&xb, lp.jitter_sigma, &mut state.rng);
        let v2 = augment_embedding(&xb, lp.jitter_sigma, &mut state.rng);
        let f1 = state.model.forward(&v1).map_err(wrap)?;
        let f2 = state.model.forward(&v2).map_err(wrap)?;

        let (ce, g_logits) = cross_entropy_loss(&f1.logits, &yb, &gb).map_err(wrap)?;
        let batch = ContrastiveBatch::from_views(f1.z.view(), f2.z.view(), &yb, &gb).map_err(wrap)?;
        let (inst, g_inst) = instance_contrastive_loss(&batch, lp.tau1).map_err(wrap)?;
        let (sub, g_sub) = subgraph_contrastive_loss(&batch, lp.tau2).map_err(wrap)?;

        // Contrastive sums are averaged over anchors for the update.
        let scale = 1.0 / n as f64;
        let g_z = (g_inst * lp.lambda1 + g_sub * lp.lambda2) * scale;
        let mut grads = state.model.backward(&v1, &f1, &g_logits, &g_z.slice(s![..n, ..]).to_owned());
        let g2 = state
            .model
            .backward(&v2, &f2, &Array2::zeros(f2.logits.dim()), &g_z.slice(s![n.., ..]).to_owned());
        accumulate(&mut grads, &g2);
        state.model.apply(&grads, params.learning_rate);

        sums.cross_entropy += ce;
        sums.instance += inst * scale;
        sums.subgraph += sub * scale;
    }
    let batches_run = all.len().max(1) as f64;

    let truth = dataset.truth();
    let (noise, label_error) = match truth {
        Some(t) => (
            Some(selection_report(&selection, Some(t))?.noise_rate),
            Some(label_error_rate(selection.pseudo_labels(), t)?),
        ),
        None => (None, None),
    };
    let report = EpochReport {
        epoch,
        loss_ce: sums.cross_entropy / batches_run,
        loss_inst: sums.instance / batches_run,
        loss_subgraph: sums.subgraph / batches_run,
        selected_count: selection.selected_count(),
        selected_noise_rate: noise,
        label_error_rate: label_error,
    };
    state.selection = selection;
    state.epochs_done = epoch;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn toy(noise: f64) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_classes: 3,
            dim: 8,
            samples_per_class: 40,
            class_center_separation: 6.0,
            cluster_stddev: 0.7,
            num_ood: 0,
            ood_center_offset: 4.0,
            sym_noise_level: noise,
            asym_noise_level: 0.0,
            asym_mapping: None,
            rng_seed: 5,
            ood_clusters: 1,
            test_samples_per_class: 0,
            test_num_ood: 0,
        })
        .unwrap()
    }

    fn params() -> TrainParams {
        TrainParams {
            graph: GraphParams {
                k: 8,
                ..Default::default()
            },
            batch_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn zero_warmup_epochs_leave_model_untouched() {
        let ds = toy(0.0);
        let mut st = TrainingState::new(&ds, &params(), 1).unwrap();
        let before = st.model.clone();
        assert!(warmup(&mut st, &ds, &params(), 0).unwrap().is_empty());
        assert_eq!(st.model, before);
    }

    #[test]
    fn warmup_fits_clean_separable_data() {
        let ds = toy(0.0);
        let p = params();
        let mut st = TrainingState::new(&ds, &p, 1).unwrap();
        let curve = warmup(&mut st, &ds, &p, 20).unwrap();
        let fwd = st.model.forward(ds.embeddings()).unwrap();
        let pred: Vec<usize> = fwd
            .logits
            .axis_iter(Axis(0))
            .map(|r| (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
            .collect();
        let acc = crate::metrics::accuracy(&pred, ds.truth().unwrap()).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_but_selects() {
        let ds = toy(0.2);
        let p = TrainParams {
            learning_rate: 0.0,
            ..params()
        };
        let mut st = TrainingState::new(&ds, &p, 3).unwrap();
        let before = st.model.clone();
        let report = train_epoch(&mut st, &ds, &p).unwrap();
        assert_eq!(st.model, before);
        assert_eq!(report.epoch, 1);
        assert_eq!(st.selection.len(), ds.len());
    }

    #[test]
    fn clean_data_selects_without_noise() {
        let ds = toy(0.0);
        let p = params();
        let mut st = TrainingState::new(&ds, &p, 2).unwrap();
        warmup(&mut st, &ds, &p, 10).unwrap();
        let report = train_epoch(&mut st, &ds, &p).unwrap();
        assert_eq!(report.selected_noise_rate, Some(0.0));
        assert!(report.selected_count > 0);
    }

    #[test]
    fn epochs_are_bit_reproducible() {
        let ds = toy(0.3);
        let p = params();
        let run = || {
            let mut st = TrainingState::new(&ds, &p, 9).unwrap();
            warmup(&mut st, &ds, &p, 2).unwrap();
            let reports: Vec<String> = (0..2)
                .map(|_| serde_json::to_string(&train_epoch(&mut st, &ds, &p).unwrap()).unwrap())
                .collect();
            (reports, st.model)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn solver_failure_names_epoch() {
        let ds = toy(0.0);
        let p = TrainParams {
            propagation: PropagationParams {
                cg_tolerance: 1e-300,
                cg_max_iters: 1,
                ..Default::default()
            },
            ..params()
        };
        let mut st = TrainingState::new(&ds, &p, 2).unwrap();
        match train_epoch(&mut st, &ds, &p) {
            Err(NgcError::Epoch { epoch, source }) => {
                assert_eq!(epoch, 1);
                assert!(matches!(*source, NgcError::SolverDiverged { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
