//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then walks the nodes in reverse creation order. Trainable weights live in
//! a [`ParamStore`] and are copied into a graph with [`Graph::param`], so
//! building and differentiating a graph never mutates parameter values.

mod adam;
mod checkpoint;
mod graph;
mod lstm;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use checkpoint::{Checkpoint, Manifest, OptimizerEntry, TensorEntry, MAGIC};
pub use graph::{CustomOp, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0:?} registered twice")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("checkpoint is missing parameter {0:?}")]
    MissingParameter(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
