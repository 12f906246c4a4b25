//! Embedding datasets, CSV persistence, synthetic Gaussian-mixture
//! generation and label-noise injection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NgcError, Result};

/// Ground truth for a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Truth {
    /// Sample belongs to one of the known classes.
    Class(usize),
    /// Sample comes from outside the known label set.
    Ood,
}

impl Truth {
    pub fn class(self) -> Option<usize> {
        match self {
            Truth::Class(c) => Some(c),
            Truth::Ood => None,
        }
    }

    pub fn is_ood(self) -> bool {
        matches!(self, Truth::Ood)
    }
}

/// How a sample's given label relates to its truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Clean,
    IndNoise,
    OodNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<u64>,
    embeddings: Array2<f64>,
    given_labels: Vec<usize>,
    num_classes: usize,
    truth: Option<Vec<Truth>>,
    split: Split,
}

impl Dataset {
    /// Builds a dataset with ids `0..N`.
    pub fn new(
        embeddings: Array2<f64>,
        given_labels: Vec<usize>,
        num_classes: usize,
        truth: Option<Vec<Truth>>,
        split: Split,
    ) -> Result<Self> {
        let ids = (0..embeddings.nrows() as u64).collect();
        Self::with_ids(ids, embeddings, given_labels, num_classes, truth, split)
    }

    pub fn with_ids(
        ids: Vec<u64>,
        embeddings: Array2<f64>,
        given_labels: Vec<usize>,
        num_classes: usize,
        truth: Option<Vec<Truth>>,
        split: Split,
    ) -> Result<Self> {
        let n = embeddings.nrows();
        if n == 0 {
            return Err(NgcError::EmptyDataset);
        }
        if embeddings.ncols() == 0 {
            return Err(NgcError::invalid("dim", "feature dimension must be at least 1"));
        }
        if num_classes < 2 {
            return Err(NgcError::invalid("num_classes", format!("need at least 2 classes, got {num_classes}")));
        }
        if given_labels.len() != n {
            return Err(NgcError::shape("given_labels", n, given_labels.len()));
        }
        if ids.len() != n {
            return Err(NgcError::shape("ids", n, ids.len()));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(NgcError::NonFinite("embeddings"));
        }
        if let Some(&bad) = given_labels.iter().find(|&&l| l >= num_classes) {
            return Err(NgcError::LabelOutOfRange {
                label: bad as i64,
                num_classes,
                line: None,
            });
        }
        if let Some(truth) = &truth {
            if truth.len() != n {
                return Err(NgcError::shape("truth", n, truth.len()));
            }
            for t in truth {
                if let Truth::Class(c) = *t {
                    if c >= num_classes {
                        return Err(NgcError::LabelOutOfRange {
                            label: c as i64,
                            num_classes,
                            line: None,
                        });
                    }
                }
            }
        }
        Ok(Self {
            ids,
            embeddings,
            given_labels,
            num_classes,
            truth,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn truth(&self) -> Option<&[Truth]> {
        self.truth.as_deref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Per-sample taxonomy; `None` when no truth is attached.
    pub fn sample_kinds(&self) -> Option<Vec<SampleKind>> {
        let truth = self.truth.as_ref()?;
        Some(
            truth
                .iter()
                .zip(&self.given_labels)
                .map(|(t, &given)| match *t {
                    Truth::Ood => SampleKind::OodNoise,
                    Truth::Class(c) if c == given => SampleKind::Clean,
                    Truth::Class(_) => SampleKind::IndNoise,
                })
                .collect(),
        )
    }

    /// Fraction of samples whose given label differs from the truth
    /// (OOD samples always count as noisy).
    pub fn noise_rate(&self) -> Option<f64> {
        let kinds = self.sample_kinds()?;
        let noisy = kinds.iter().filter(|k| **k != SampleKind::Clean).count();
        Some(noisy as f64 / kinds.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Row normalization

/// Output of [`normalize_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows {
    pub rows: Array2<f64>,
    /// Indices of rows that were all zero and left untouched.
    pub zero_rows: Vec<usize>,
}

pub fn normalize_rows(matrix: &Array2<f64>) -> NormalizedRows {
    let mut rows = matrix.clone();
    let mut zero_rows = Vec::new();
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            zero_rows.push(i);
        }
    }
    NormalizedRows { rows, zero_rows }
}

pub(crate) fn unit(v: ArrayView1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v.mapv(|x| x / norm)
    } else {
        v.to_owned()
    }
}

// ---------------------------------------------------------------------------
// Noise injection

fn check_level(name: &'static str, level: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&level) {
        return Err(NgcError::invalid(name, format!("must lie in [0, 1], got {level}")));
    }
    Ok(())
}

/// Number of indices touched when corrupting `len` labels at `level`.
pub fn corrupted_count(len: usize, level: f64) -> usize {
    ((level * len as f64).floor() as usize).min(len)
}

/// Resamples a `level` fraction of the labels uniformly over all
/// `num_classes` classes. A resampled label may land on its old value.
///
/// Returns the new labels and the (sorted) indices that were resampled.
pub fn inject_symmetric_noise<R: Rng + ?Sized>(
    labels: &[usize],
    level: f64,
    num_classes: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_level("sym_noise_level", level)?;
    if num_classes < 2 {
        return Err(NgcError::invalid("num_classes", "need at least 2 classes"));
    }
    let mut out = labels.to_vec();
    let mut chosen = sample(rng, labels.len(), corrupted_count(labels.len(), level)).into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        out[i] = rng.random_range(0..num_classes);
    }
    Ok((out, chosen))
}

/// Replaces a `level` fraction of the labels `y` by `mapping[y]`.
pub fn inject_asymmetric_noise<R: Rng + ?Sized>(
    labels: &[usize],
    level: f64,
    mapping: &[usize],
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_level("asym_noise_level", level)?;
    validate_mapping(mapping)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= mapping.len()) {
        return Err(NgcError::LabelOutOfRange {
            label: bad as i64,
            num_classes: mapping.len(),
            line: None,
        });
    }
    let mut out = labels.to_vec();
    let mut chosen = sample(rng, labels.len(), corrupted_count(labels.len(), level)).into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        out[i] = mapping[out[i]];
    }
    Ok((out, chosen))
}

/// The default asymmetric flip `y -> (y + 1) mod K`.
pub fn cyclic_mapping(num_classes: usize) -> Vec<usize> {
    (0..num_classes).map(|c| (c + 1) % num_classes).collect()
}

fn validate_mapping(mapping: &[usize]) -> Result<()> {
    if let Some(&bad) = mapping.iter().find(|&&t| t >= mapping.len()) {
        return Err(NgcError::invalid(
            "asym_mapping",
            format!("target class {bad} out of range for {} classes", mapping.len()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub class_center_separation: f64,
    pub cluster_stddev: f64,
    pub num_ood: usize,
    pub ood_center_offset: f64,
    #[serde(default)]
    pub sym_noise_level: f64,
    #[serde(default)]
    pub asym_noise_level: f64,
    /// Class flip map for asymmetric noise; cyclic shift when absent.
    #[serde(default)]
    pub asym_mapping: Option<Vec<usize>>,
    pub rng_seed: u64,
    /// OOD samples are spread round-robin over this many clusters.
    #[serde(default = "default_ood_clusters")]
    pub ood_clusters: usize,
    /// Size of the held-out test split produced by [`generate_splits`].
    #[serde(default)]
    pub test_samples_per_class: usize,
    #[serde(default)]
    pub test_num_ood: usize,
}

fn default_ood_clusters() -> usize {
    1
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(NgcError::invalid("num_classes", format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.dim == 0 {
            return Err(NgcError::invalid("dim", "must be at least 1"));
        }
        for (name, v) in [
            ("class_center_separation", self.class_center_separation),
            ("cluster_stddev", self.cluster_stddev),
            ("ood_center_offset", self.ood_center_offset),
            ("sym_noise_level", self.sym_noise_level),
            ("asym_noise_level", self.asym_noise_level),
        ] {
            if !v.is_finite() {
                return Err(NgcError::invalid(name, format!("must be finite, got {v}")));
            }
        }
        if self.cluster_stddev <= 0.0 {
            return Err(NgcError::invalid("cluster_stddev", "must be > 0"));
        }
        if self.class_center_separation < 0.0 {
            return Err(NgcError::invalid("class_center_separation", "must be >= 0"));
        }
        check_level("sym_noise_level", self.sym_noise_level)?;
        check_level("asym_noise_level", self.asym_noise_level)?;
        if self.sym_noise_level > 0.0 && self.asym_noise_level > 0.0 {
            return Err(NgcError::invalid(
                "asym_noise_level",
                "symmetric and asymmetric noise cannot both be enabled",
            ));
        }
        if let Some(m) = &self.asym_mapping {
            if m.len() != self.num_classes {
                return Err(NgcError::invalid(
                    "asym_mapping",
                    format!("expected {} entries, got {}", self.num_classes, m.len()),
                ));
            }
            validate_mapping(m)?;
        }
        if self.num_ood > 0 && self.ood_clusters == 0 {
            return Err(NgcError::invalid("ood_clusters", "must be >= 1 when num_ood > 0"));
        }
        if self.samples_per_class * self.num_classes + self.num_ood == 0 {
            return Err(NgcError::EmptyDataset);
        }
        Ok(())
    }

    fn mapping(&self) -> Vec<usize> {
        self.asym_mapping
            .clone()
            .unwrap_or_else(|| cyclic_mapping(self.num_classes))
    }
}

const STREAM_CENTERS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_TEST: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Centers {
    ind: Array2<f64>,
    ood: Array2<f64>,
}

/// Class centers sit on scaled coordinate axes (pairwise distance exactly
/// the requested separation) while `K <= D`; beyond that they are rejection
/// sampled on a sphere. OOD centers take the next free axes, or random
/// directions once the axes run out, at norm `ood_center_offset`.
fn centers(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Centers> {
    let (k, d) = (cfg.num_classes, cfg.dim);
    let sep = cfg.class_center_separation;
    let mut ind = Array2::zeros((k, d));
    if k <= d {
        let r = sep / std::f64::consts::SQRT_2;
        for c in 0..k {
            ind[[c, c]] = r;
        }
    } else {
        // Radius large enough that random directions separate easily.
        let r = sep.max(f64::MIN_POSITIVE) * (k as f64).sqrt();
        let mut placed = 0;
        let mut attempts = 0usize;
        while placed < k {
            attempts += 1;
            if attempts > 100_000 {
                return Err(NgcError::invalid(
                    "class_center_separation",
                    "could not place class centers with the requested separation",
                ));
            }
            let dir = random_direction(d, rng);
            let cand = dir * r;
            let ok = (0..placed).all(|p| {
                let diff = &ind.row(p) - &cand;
                diff.dot(&diff).sqrt() >= sep
            });
            if ok {
                ind.row_mut(placed).assign(&cand);
                placed += 1;
            }
        }
    }
    let m = if cfg.num_ood > 0 { cfg.ood_clusters } else { 0 };
    let mut ood = Array2::zeros((m, d));
    for j in 0..m {
        if k + j < d && k <= d {
            ood[[j, k + j]] = cfg.ood_center_offset;
        } else {
            ood.row_mut(j).assign(&(random_direction(d, rng) * cfg.ood_center_offset));
        }
    }
    Ok(Centers { ind, ood })
}

fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Draws `per_class` IND samples for every class followed by `num_ood`
/// OOD samples. OOD samples receive uniformly random given labels.
fn draw(
    centers: &Centers,
    cfg: &SyntheticConfig,
    per_class: usize,
    num_ood: usize,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Vec<usize>, Vec<Truth>) {
    let k = cfg.num_classes;
    let n = per_class * k + num_ood;
    let noise = Normal::new(0.0, cfg.cluster_stddev).expect("stddev validated");
    let mut x = Array2::zeros((n, cfg.dim));
    let mut labels = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut row = 0;
    for c in 0..k {
        for _ in 0..per_class {
            for (j, v) in x.row_mut(row).iter_mut().enumerate() {
                *v = centers.ind[[c, j]] + noise.sample(rng);
            }
            labels.push(c);
            truth.push(Truth::Class(c));
            row += 1;
        }
    }
    for o in 0..num_ood {
        let cluster = o % centers.ood.nrows();
        for (j, v) in x.row_mut(row).iter_mut().enumerate() {
            *v = centers.ood[[cluster, j]] + noise.sample(rng);
        }
        labels.push(rng.random_range(0..k));
        truth.push(Truth::Ood);
        row += 1;
    }
    (x, labels, truth)
}

/// Generates the noisy training split described by `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let centers = centers(cfg, &mut stream_rng(cfg.rng_seed, STREAM_CENTERS))?;
    let (x, mut labels, truth) = draw(
        &centers,
        cfg,
        cfg.samples_per_class,
        cfg.num_ood,
        &mut stream_rng(cfg.rng_seed, STREAM_TRAIN),
    );

    // Noise only touches IND samples; OOD labels are random already.
    let n_ind = cfg.samples_per_class * cfg.num_classes;
    let mut noise_rng = stream_rng(cfg.rng_seed, STREAM_NOISE);
    let ind = &labels[..n_ind];
    let noisy = if cfg.sym_noise_level > 0.0 {
        inject_symmetric_noise(ind, cfg.sym_noise_level, cfg.num_classes, &mut noise_rng)?.0
    } else if cfg.asym_noise_level > 0.0 {
        inject_asymmetric_noise(ind, cfg.asym_noise_level, &cfg.mapping(), &mut noise_rng)?.0
    } else {
        ind.to_vec()
    };
    labels[..n_ind].copy_from_slice(&noisy);

    Dataset::new(x, labels, cfg.num_classes, Some(truth), Split::Train)
}

/// Generates the training split plus a clean held-out test split drawn
/// from the same class and OOD clusters, with ids following the training
/// ids. The test split is `None` when
/// it would be empty.
pub fn generate_splits(cfg: &SyntheticConfig) -> Result<(Dataset, Option<Dataset>)> {
    let train = generate_synthetic(cfg)?;
    if cfg.test_samples_per_class * cfg.num_classes + cfg.test_num_ood == 0 {
        return Ok((train, None));
    }
    let centers = centers(cfg, &mut stream_rng(cfg.rng_seed, STREAM_CENTERS))?;
    let (x, labels, truth) = draw(
        &centers,
        cfg,
        cfg.test_samples_per_class,
        cfg.test_num_ood,
        &mut stream_rng(cfg.rng_seed, STREAM_TEST),
    );
    // Test ids continue after the training ids.
    let offset = train.len() as u64;
    let ids = (offset..offset + x.nrows() as u64).collect();
    let test = Dataset::with_ids(ids, x, labels, cfg.num_classes, Some(truth), Split::Test)?;
    Ok((train, Some(test)))
}

// ---------------------------------------------------------------------------
// CSV

const OOD_MARKER: &str = "-1";

fn header(dim: usize) -> String {
    let mut h = String::from("id,given_label,true_label");
    for j in 0..dim {
        let _ = write!(h, ",feat_{j}");
    }
    h
}

/// Serializes to the `id,given_label,true_label,feat_*` CSV layout.
/// Floats use the shortest representation that parses back exactly.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = header(ds.dim());
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{},{},", ds.ids[i], ds.given_labels[i]);
        match ds.truth.as_ref().map(|t| t[i]) {
            Some(Truth::Class(c)) => {
                let _ = write!(out, "{c}");
            }
            Some(Truth::Ood) => out.push_str(OOD_MARKER),
            None => {}
        }
        for v in ds.embeddings.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_csv(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, num_classes: usize, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_dataset_csv(&text, num_classes, split).map_err(|e| match e {
        NgcError::Parse { line, message, .. } => NgcError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Parses the dataset CSV. Line numbers in errors are 1-based and count
/// the header.
pub fn parse_dataset_csv(text: &str, num_classes: usize, split: Split) -> Result<Dataset> {
    let err = |line: usize, message: String| NgcError::Parse {
        path: Default::default(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, head) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| err(1, "missing header".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "given_label" || cols[2] != "true_label" {
        return Err(err(1, format!("bad header `{head}`")));
    }
    let dim = cols.len() - 3;
    for (j, c) in cols[3..].iter().enumerate() {
        if *c != format!("feat_{j}") {
            return Err(err(1, format!("expected column `feat_{j}`, found `{c}`")));
        }
    }

    let mut ids = Vec::new();
    let mut given = Vec::new();
    let mut truth: Vec<Option<Truth>> = Vec::new();
    let mut feats = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad id `{}`", fields[0])))?;
        let label: i64 = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad given_label `{}`", fields[1])))?;
        if label < 0 || label as usize >= num_classes {
            return Err(NgcError::LabelOutOfRange {
                label,
                num_classes,
                line: Some(lineno),
            });
        }
        let t = match fields[2] {
            "" => None,
            OOD_MARKER => Some(Truth::Ood),
            s => {
                let c: i64 = s
                    .parse()
                    .map_err(|_| err(lineno, format!("bad true_label `{s}`")))?;
                if c < 0 || c as usize >= num_classes {
                    return Err(NgcError::LabelOutOfRange {
                        label: c,
                        num_classes,
                        line: Some(lineno),
                    });
                }
                Some(Truth::Class(c as usize))
            }
        };
        for s in &fields[3..] {
            let v: f64 = s
                .parse()
                .map_err(|_| err(lineno, format!("bad feature value `{s}`")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite feature value `{s}`")));
            }
            feats.push(v);
        }
        ids.push(id);
        given.push(label as usize);
        truth.push(t);
    }
    if ids.is_empty() {
        return Err(NgcError::EmptyDataset);
    }
    let truth = match (truth.iter().all(Option::is_some), truth.iter().all(Option::is_none)) {
        (true, _) => Some(truth.into_iter().map(Option::unwrap).collect()),
        (_, true) => None,
        _ => {
            let line = truth.iter().position(Option::is_none).unwrap() + 2;
            return Err(err(line, "true_label missing while other rows carry one".into()));
        }
    };
    let x = Array2::from_shape_vec((ids.len(), dim), feats).expect("row widths checked");
    Dataset::with_ids(ids, x, given, num_classes, truth, split)
}
