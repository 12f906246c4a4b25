//! Linear encoder with a linear classifier head and a linear projector.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::normalize_rows;
use crate::error::{NgcError, Result};
use crate::losses::normalize_backward;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub hidden_dim: usize,
    pub projection_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            projection_dim: 16,
        }
    }
}

/// `h = x E`, `logits = h C`, `z = normalize(h P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    /// `D x H`
    pub encoder: Array2<f64>,
    /// `H x K`
    pub classifier: Array2<f64>,
    /// `H x D_P`
    pub projector: Array2<f64>,
}

/// Intermediate values of a forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
    /// Projector output before normalization.
    pub projection: Array2<f64>,
    /// Unit-norm embeddings.
    pub z: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Array2<f64>,
    pub classifier: Array2<f64>,
    pub projector: Array2<f64>,
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("finite scale");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl ToyModel {
    /// Gaussian initialization with variance `1 / fan_in`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, num_classes: usize, shape: ModelShape, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 || shape.hidden_dim == 0 || shape.projection_dim == 0 {
            return Err(NgcError::invalid(
                "model",
                format!("degenerate shape: input {input_dim}, classes {num_classes}, {shape:?}"),
            ));
        }
        Ok(Self {
            encoder: gaussian_matrix(input_dim, shape.hidden_dim, rng),
            classifier: gaussian_matrix(shape.hidden_dim, num_classes, rng),
            projector: gaussian_matrix(shape.hidden_dim, shape.projection_dim, rng),
        })
    }

    pub fn from_parts(encoder: Array2<f64>, classifier: Array2<f64>, projector: Array2<f64>) -> Result<Self> {
        let h = encoder.ncols();
        if classifier.nrows() != h || projector.nrows() != h {
            return Err(NgcError::shape(
                "model parts",
                format!("hidden dim {h}"),
                format!("classifier {:?}, projector {:?}", classifier.dim(), projector.dim()),
            ));
        }
        Ok(Self {
            encoder,
            classifier,
            projector,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.ncols()
    }

    pub fn projection_dim(&self) -> usize {
        self.projector.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Forward> {
        if x.ncols() != self.input_dim() {
            return Err(NgcError::shape("forward input width", self.input_dim(), x.ncols()));
        }
        let hidden = x.dot(&self.encoder);
        let logits = hidden.dot(&self.classifier);
        let projection = hidden.dot(&self.projector);
        let z = normalize_rows(&projection).rows;
        Ok(Forward {
            hidden,
            logits,
            projection,
            z,
        })
    }

    /// Chains `dL/dlogits` and `dL/dz` back to the parameters.
    pub fn backward(&self, x: &Array2<f64>, fwd: &Forward, grad_logits: &Array2<f64>, grad_z: &Array2<f64>) -> Gradients {
        let grad_proj = normalize_backward(&fwd.projection, &fwd.z, grad_z);
        let classifier = fwd.hidden.t().dot(grad_logits);
        let projector = fwd.hidden.t().dot(&grad_proj);
        let grad_hidden = grad_logits.dot(&self.classifier.t()) + grad_proj.dot(&self.projector.t());
        let encoder = x.t().dot(&grad_hidden);
        Gradients {
            encoder,
            classifier,
            projector,
        }
    }

    /// Plain gradient step `theta <- theta - lr * grad`.
    pub fn apply(&mut self, grads: &Gradients, learning_rate: f64) {
        if learning_rate == 0.0 {
            return;
        }
        self.encoder.scaled_add(-learning_rate, &grads.encoder);
        self.classifier.scaled_add(-learning_rate, &grads.classifier);
        self.projector.scaled_add(-learning_rate, &grads.projector);
    }
}

/// `x + N(0, sigma^2)` noise per coordinate.
pub fn augment_embedding<R: Rng + ?Sized>(x: &Array2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    if sigma == 0.0 {
        return x.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    x.mapv(|v| v + normal.sample(rng))
}
