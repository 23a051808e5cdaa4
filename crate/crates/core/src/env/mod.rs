//! The planar quadruped agent and its episode lifecycle.

mod features;
pub mod model;
mod quadruped;
mod state;

pub use features::{c_high_features, ObsNormalizer, C_HIGH_DIM, REF_DIM, STATE_DIM};
pub use model::{LinkPose, QuadrupedModel, NUM_JOINTS, NUM_LEGS, NUM_LINKS};
pub use quadruped::{check_termination, Action, EnvConfig, PerturbKind, QuadrupedEnv, StepInfo, ACTION_DIM};
pub use state::{heading_velocity, AgentState, LinkState};

use crate::physics::PhysicsError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("non-finite action component {index}: {value}")]
    NonFiniteAction { index: usize, value: f64 },
    #[error("action has {found} components, expected {expected}")]
    ActionDim { expected: usize, found: usize },
    #[error("reference frame does not match the model: {0}")]
    FrameMismatch(String),
    #[error("invalid environment config: {0}")]
    Config(String),
}
