//! Network inputs derived from `AgentState`.
//!
//! Layout per state: torso height, torso rotation (w, z), torso velocity,
//! torso angular rate; for each of the 8 leg links its torso-frame position,
//! rotation (w, z), torso-frame velocity relative to the torso and angular
//! rate; the 8 joint angles; the 4 contact flags. Quaternion and vector
//! components that are identically zero in the plane are omitted.

use super::model::{NUM_JOINTS, NUM_LEGS, NUM_LINKS};
use super::AgentState;
use crate::physics::{rotate, wrap_angle, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const STATE_DIM: usize = 6 + 7 * (NUM_LINKS - 1) + NUM_JOINTS + NUM_LEGS;
/// One reference frame plus its COM-x and yaw offsets from the agent.
pub const REF_DIM: usize = STATE_DIM + 2;
pub const C_HIGH_DIM: usize = 2;

fn raw_state(s: &AgentState, out: &mut Vec<f64>) {
    let t = &s.links[0];
    let tp = Vec2::new(t.position[0], t.position[1]);
    let tv = Vec2::new(t.velocity[0], t.velocity[1]);
    let pitch = s.link_angles[0];
    out.extend_from_slice(&[
        t.position[1],
        t.rotation[0],
        t.rotation[3],
        t.velocity[0],
        t.velocity[1],
        t.angular_velocity[2],
    ]);
    for l in &s.links[1..] {
        let p = rotate(-pitch, Vec2::new(l.position[0], l.position[1]) - tp);
        let v = rotate(-pitch, Vec2::new(l.velocity[0], l.velocity[1]) - tv);
        out.extend_from_slice(&[p.x, p.y, l.rotation[0], l.rotation[3], v.x, v.y, l.angular_velocity[2]]);
    }
    out.extend_from_slice(&s.joint_angles);
    out.extend(s.contact_vector());
}

/// Commands scaled to roughly unit range: `(σ/4, Δθ/π)`.
pub fn c_high_features(speed: f64, heading_delta: f64) -> [f64; C_HIGH_DIM] {
    [speed / 4.0, heading_delta / PI]
}

/// Fixed per-feature scales (max-abs over a reference dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub scale: Vec<f64>,
}

impl Default for ObsNormalizer {
    fn default() -> Self {
        Self {
            scale: vec![1.0; STATE_DIM],
        }
    }
}

impl ObsNormalizer {
    pub fn fit<'a, I: IntoIterator<Item = &'a AgentState>>(frames: I) -> Self {
        let mut scale = vec![0.0f64; STATE_DIM];
        let mut buf = Vec::with_capacity(STATE_DIM);
        for f in frames {
            buf.clear();
            raw_state(f, &mut buf);
            for (s, v) in scale.iter_mut().zip(&buf) {
                *s = s.max(v.abs());
            }
        }
        for s in &mut scale {
            if *s < 1e-6 {
                *s = 1.0;
            }
        }
        Self { scale }
    }

    pub fn from_scale(scale: Vec<f64>) -> Option<Self> {
        (scale.len() == STATE_DIM && scale.iter().all(|s| *s > 0.0 && s.is_finite())).then_some(Self { scale })
    }

    pub fn state_into(&self, s: &AgentState, out: &mut Vec<f64>) {
        let start = out.len();
        raw_state(s, out);
        for (v, k) in out[start..].iter_mut().zip(&self.scale) {
            *v /= k;
        }
    }

    pub fn state(&self, s: &AgentState) -> Vec<f64> {
        let mut out = Vec::with_capacity(STATE_DIM);
        self.state_into(s, &mut out);
        out
    }

    /// Reference frame features relative to the current agent state.
    pub fn reference_into(&self, agent: &AgentState, reference: &AgentState, out: &mut Vec<f64>) {
        self.state_into(reference, out);
        out.push((reference.com[0] - agent.com[0]).clamp(-5.0, 5.0));
        out.push(wrap_angle(reference.yaw - agent.yaw) / PI);
    }

    /// `c_low`: the next two reference frames.
    pub fn c_low(&self, agent: &AgentState, next: &AgentState, after: &AgentState) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * REF_DIM);
        self.reference_into(agent, next, &mut out);
        self.reference_into(agent, after, &mut out);
        out
    }
}
