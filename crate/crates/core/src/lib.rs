//! Noisy graph cleaning for learning with open-world noisy labels.
//!
//! The pipeline works on embedding datasets whose labels contain both
//! in-distribution (IND) noise and out-of-distribution (OOD) samples:
//!
//! 1. [`graph`] builds a cosine k-NN graph over projector embeddings.
//! 2. [`propagation`] spreads soft pseudo-labels over the graph by solving
//!    `(I - alpha S) Y~ = (1 - alpha) Y` with conjugate gradient.
//! 3. [`selection`] keeps confident nodes, then the largest connected
//!    component of each class subgraph.
//! 4. [`trainer`] trains a small linear model with cross-entropy plus
//!    instance- and subgraph-level contrastive losses ([`losses`]).
//! 5. [`ood`] scores test points against class prototypes.
//!
//! [`metrics`] holds the evaluation measures and [`dataset`] the data
//! model, CSV I/O and the synthetic generator.

pub mod cg;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ood;
pub mod propagation;
pub mod selection;
pub mod trainer;

pub use error::{NgcError, Result};
