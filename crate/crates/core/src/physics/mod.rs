//! Deterministic planar rigid-body engine.
//!
//! Bodies live in the sagittal x-y plane (x forward, y up, angles
//! counter-clockwise). Each step integrates with semi-implicit Euler and
//! resolves joints, joint limits and contacts with sequential velocity-level
//! impulses plus Baumgarte stabilisation.

mod body;
mod collision;
mod joint;
mod raycast;
mod world;

pub use body::{BodyId, RigidBody, Shape};
pub use joint::{pd_torque, wrap_angle, JointId, RevoluteJoint};
pub use raycast::RayHit;
pub use world::{ContactPoint, Ground, World, WorldConfig};

pub use glam::DVec2 as Vec2;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("simulation diverged at step {step}")]
    Diverged { step: u64 },
    #[error("invalid body: {0}")]
    InvalidBody(String),
    #[error("torque vector has {found} entries, world has {expected} joints")]
    TorqueCount { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[inline]
pub(crate) fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// `s × v` for a scalar angular velocity.
#[inline]
pub(crate) fn cross_sv(s: f64, v: Vec2) -> Vec2 {
    Vec2::new(-s * v.y, s * v.x)
}

#[inline]
pub(crate) fn rotate(angle: f64, v: Vec2) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}
