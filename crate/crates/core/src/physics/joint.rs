use super::{BodyId, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointId(pub usize);

/// Pin joint between a parent (or the static world) and a child body.
///
/// The joint angle is `child.angle - parent.angle`; with no parent the
/// parent angle is zero and `parent_anchor` is a world point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevoluteJoint {
    pub parent: Option<BodyId>,
    pub child: BodyId,
    pub parent_anchor: Vec2,
    pub child_anchor: Vec2,
    pub limits: Option<(f64, f64)>,
    pub kp: f64,
    pub kd: f64,
    pub max_torque: f64,
    #[serde(skip)]
    pub(crate) impulse: Vec2,
    #[serde(skip)]
    pub(crate) lower_impulse: f64,
    #[serde(skip)]
    pub(crate) upper_impulse: f64,
}

impl RevoluteJoint {
    pub fn new(parent: Option<BodyId>, child: BodyId, parent_anchor: Vec2, child_anchor: Vec2) -> Self {
        Self {
            parent,
            child,
            parent_anchor,
            child_anchor,
            limits: None,
            kp: 0.0,
            kd: 0.0,
            max_torque: 150.0,
            impulse: Vec2::ZERO,
            lower_impulse: 0.0,
            upper_impulse: 0.0,
        }
    }

    pub fn with_limits(mut self, lower: f64, upper: f64) -> Self {
        self.limits = Some((lower, upper));
        self
    }

    pub fn with_gains(mut self, kp: f64, kd: f64, max_torque: f64) -> Self {
        self.kp = kp;
        self.kd = kd;
        self.max_torque = max_torque;
        self
    }

    pub(crate) fn reset_warm_start(&mut self) {
        self.impulse = Vec2::ZERO;
        self.lower_impulse = 0.0;
        self.upper_impulse = 0.0;
    }
}

/// Maps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// `kp·wrap(target − angle) + kd·(target_vel − velocity)`, clamped to the
/// joint's torque limit.
pub fn pd_torque(joint: &RevoluteJoint, angle: f64, velocity: f64, target: f64, target_vel: f64) -> f64 {
    let tau = joint.kp * wrap_angle(target - angle) + joint.kd * (target_vel - velocity);
    tau.clamp(-joint.max_torque, joint.max_torque)
}
