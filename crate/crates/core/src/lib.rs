//! Coarse- and fine-grained multi-graph multi-label learning.
//!
//! Objects are represented as bags of graphs. A bag carries a set of class
//! labels during training; the learned model scores every class for every
//! graph with a kernel expansion over representative graphs, so labels can
//! be predicted for whole bags (coarse) and for the graphs inside them (fine).
//!
//! The pipeline is:
//!
//! 1. [`graph`]: data model and the line-delimited dataset format.
//! 2. [`kernels`]: Weisfeiler-Lehman subtree and vertex-histogram kernels,
//!    plus the cached Gram matrix over a dataset.
//! 3. [`trainer`]: alternating representative selection and kernelized
//!    subgradient descent on the thresholding rank-loss hinge surrogate.
//! 4. [`model`]: the resulting dual model, persisted with its
//!    representative graphs embedded.
//! 5. [`predictor`] and [`metrics`]: graph- and bag-level prediction and
//!    the standard multi-label measures.
//!
//! [`synthgen`] produces seeded synthetic datasets with planted per-graph
//! labels.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod predictor;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Bag, Dataset, Graph, VertexData, VertexVariant};
pub use kernels::{GramCache, KernelConfig, KernelKind};
pub use model::DualModel;
pub use trainer::{LossMode, TrainConfig};
