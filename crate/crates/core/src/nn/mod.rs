//! Dense-network engine with explicit forward and backward passes.
//!
//! Everything trainable in the crate (gating, primitive, value and
//! discriminator networks) is a [`DenseNet`]. Gradients are computed by hand
//! in [`DenseNet::backward`] and can be cross-checked against
//! [`finite_diff_grad`].

mod activation;
mod adam;
mod checkpoint;
mod dense;
mod gradcheck;
mod tensor;

pub use activation::Activation;
pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointMeta, LayerRecord, NetRecord};
pub use dense::{DenseLayer, DenseNet, ForwardCache, LayerGrads, NetGrads};
pub use gradcheck::{
    central_difference, compare_grads, finite_diff_grad, finite_diff_subset, GradCheckReport,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("tensor contains a non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("input dimension {found} does not match network input {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("output gradient dimension {found} does not match network output {expected}")]
    OutputGradDim { expected: usize, found: usize },
    #[error("forward cache does not belong to this network state ({reason})")]
    StaleCache { reason: &'static str },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },
    #[error("gradient set is not congruent with the parameters of {net}")]
    GradShape { net: String },
    #[error("invalid network definition: {0}")]
    Invalid(String),
    #[error("unknown activation tag {0:?}")]
    UnknownActivation(String),
}
