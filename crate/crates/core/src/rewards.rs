//! Scalar reward terms for imitation and for the high-level objectives.

use crate::env::model::{parent_link, NUM_LINKS};
use crate::env::AgentState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub pose: f64,
    pub vel: f64,
    pub com: f64,
    pub contact: f64,
    pub lambda_contact: f64,
    pub lambda_speed: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            pose: 0.65,
            vel: 0.1,
            com: 0.1,
            contact: 0.15,
            lambda_contact: 5.0,
            lambda_speed: 0.8,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.pose, self.vel, self.com, self.contact];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err("imitation weights must be nonnegative".into());
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("imitation weights sum to {sum}, expected 1"));
        }
        if !(self.lambda_contact >= 0.0) || !(self.lambda_speed >= 0.0) {
            return Err("reward scales must be nonnegative".into());
        }
        Ok(())
    }
}

type Quat = [f64; 4];

fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn quat_conj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Rotation angle of `a·b⁻¹` in `[0, π]`.
pub fn quat_angle(a: Quat, b: Quat) -> f64 {
    let r = quat_mul(a, quat_conj(b));
    let vec = (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt();
    2.0 * vec.atan2(r[0].abs())
}

/// Root orientation followed by each joint's parent-relative rotation.
fn joint_rotations(s: &AgentState) -> Vec<Quat> {
    let mut out = Vec::with_capacity(NUM_LINKS);
    out.push(s.links[0].rotation);
    for l in 1..s.links.len() {
        out.push(quat_mul(quat_conj(s.links[parent_link(l)].rotation), s.links[l].rotation));
    }
    out
}

/// `exp[−2 Σ_j θ_j²]` with `θ_j` the relative rotation angle per joint.
pub fn r_pose(s: &AgentState, r: &AgentState) -> f64 {
    let err: f64 = joint_rotations(r)
        .into_iter()
        .zip(joint_rotations(s))
        .map(|(a, b)| quat_angle(a, b).powi(2))
        .sum();
    (-2.0 * err).exp()
}

fn joint_rates(s: &AgentState) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(s.links[0].angular_velocity[2]).chain(s.joint_velocities.iter().copied())
}

/// `exp[−0.1 Σ_j (q̂̇_j − q̇_j)²]` over the root rate and joint rates.
pub fn r_vel(s: &AgentState, r: &AgentState) -> f64 {
    let err: f64 = joint_rates(r).zip(joint_rates(s)).map(|(a, b)| (a - b).powi(2)).sum();
    (-0.1 * err).exp()
}

/// `exp[−10 ‖p̂_c − p_c‖²]` on the horizontal COM position, which in the
/// planar model with a kinematic yaw is the integrated ground track.
pub fn r_com(s: &AgentState, r: &AgentState) -> f64 {
    let dx = r.ground_track[0] - s.ground_track[0];
    let dz = r.ground_track[1] - s.ground_track[1];
    (-10.0 * (dx * dx + dz * dz)).exp()
}

pub fn contact_mismatches(s: &AgentState, r: &AgentState) -> usize {
    s.contacts.iter().zip(&r.contacts).filter(|(a, b)| a != b).count()
}

/// `exp[−(λ_c/4) · #mismatched feet]`.
pub fn r_contact(s: &AgentState, r: &AgentState, lambda_c: f64) -> f64 {
    (-(lambda_c / 4.0) * contact_mismatches(s, r) as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImitationTerms {
    pub pose: f64,
    pub vel: f64,
    pub com: f64,
    pub contact: f64,
    pub total: f64,
}

pub fn imitation_terms(s: &AgentState, r: &AgentState, w: &RewardWeights) -> ImitationTerms {
    let pose = r_pose(s, r);
    let vel = r_vel(s, r);
    let com = r_com(s, r);
    let contact = r_contact(s, r, w.lambda_contact);
    ImitationTerms {
        pose,
        vel,
        com,
        contact,
        total: w.pose * pose + w.vel * vel + w.com * com + w.contact * contact,
    }
}

pub fn r_imitation(s: &AgentState, r: &AgentState, w: &RewardWeights) -> f64 {
    imitation_terms(s, r, w).total
}

/// `exp[−λ_spd (σ − ‖v‖)²]`.
pub fn r_speed(sigma: f64, v: [f64; 2], lambda_spd: f64) -> f64 {
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    (-lambda_spd * (sigma - speed).powi(2)).exp()
}

/// Cosine similarity between `(cos θ̂, −sin θ̂)` and `v`, mapped to `[0, 1]`.
/// A zero velocity scores 0.5.
pub fn r_heading(theta: f64, v: [f64; 2]) -> f64 {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n == 0.0 {
        return 0.5;
    }
    let cos = (theta.cos() * v[0] - theta.sin() * v[1]) / n;
    ((cos.clamp(-1.0, 1.0) + 1.0) * 0.5).clamp(0.0, 1.0)
}
