//! Multiplicative composition of Gaussian primitives under two gating networks.

mod gaussian;
mod gating;
mod mcp;
mod primitive;

pub use gaussian::{compose, compose_general, log_prob, sample, CompositeGaussian, LogProb, VAR_FLOOR};
pub use gating::{floor_weights, GatingKind, GatingNet, WEIGHT_SUM_FLOOR};
pub use mcp::{BatchForward, Level, McpPolicy, PolicyConfig, PolicyGrads};
pub use primitive::PrimitiveNet;

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dim { what: &'static str, expected: usize, found: usize },
    #[error("composition undefined: primitive weights sum to zero")]
    CompositionUndefined,
    #[error("primitive weights must be finite and nonnegative")]
    NegativeWeight,
    #[error("variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("{0}")]
    Network(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
