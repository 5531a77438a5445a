//! Minimal differentiable-computation substrate: parameter tensors, a
//! reverse-mode tape over dense matrices, linear/MLP layers, Adam, a
//! finite-difference checker and a binary checkpoint format.
//!
//! All scalars are `f64`.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod matrix;
mod param;

pub use adam::{AdamState, LrSchedule};
pub use gradcheck::{fd_check, relative_error, FdOptions, FdReport};
pub use graph::{accumulate_param_grads, sigmoid, Gradients, Graph, NodeId};
pub use layers::{linear_forward, softmax, LinearLayer, Mlp2};
pub use matrix::Matrix;
pub use param::{ParamId, ParamStore, ParamTensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node does not belong to this graph")]
    UnknownNode,
    #[error("backward needs a scalar root, got {0}×{1}")]
    NonScalarRoot(usize, usize),
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGrad(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for NnError {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Io(a), Self::Io(b)) => a.kind() == b.kind(),
            _ => self.to_string() == other.to_string(),
        }
    }
}
