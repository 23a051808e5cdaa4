use super::model::{NUM_JOINTS, NUM_LEGS, NUM_LINKS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    /// World position (z ≡ 0).
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// `[w, x, y, z]`, rotation about the out-of-plane axis.
    pub rotation: [f64; 4],
    /// Only the z component is ever non-zero.
    pub angular_velocity: [f64; 3],
}

impl LinkState {
    pub fn planar(x: f64, y: f64, angle: f64, vx: f64, vy: f64, omega: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            position: [x, y, 0.0],
            velocity: [vx, vy, 0.0],
            rotation: [c, 0.0, 0.0, s],
            angular_velocity: [0.0, 0.0, omega],
        }
    }

    /// Planar angle recovered from the quaternion, in `(-π, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.rotation[3].atan2(self.rotation[0])
    }
}

/// Full kinematic state of the agent; reference frames share this layout.
///
/// Link quantities are stored in world coordinates; `features` re-expresses
/// them in the torso frame for the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Torso first, then upper/lower segments of LF, RF, LR, RR.
    pub links: Vec<LinkState>,
    /// Unwrapped absolute link angles, kept alongside the quaternions.
    pub link_angles: Vec<f64>,
    pub joint_angles: [f64; NUM_JOINTS],
    pub joint_velocities: [f64; NUM_JOINTS],
    /// LF, RF, LR, RR.
    pub contacts: [bool; NUM_LEGS],
    /// A link other than a foot touches the ground.
    pub non_foot_contact: bool,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub com: [f64; 3],
    pub com_velocity: [f64; 3],
    /// Horizontal-plane COM velocity `(ẋ·cos ψ, −ẋ·sin ψ)`.
    pub heading_velocity: [f64; 2],
    /// Integrated horizontal-plane position of the COM.
    pub ground_track: [f64; 2],
    /// Foot points in the torso frame.
    pub feet: [[f64; 2]; NUM_LEGS],
}

impl AgentState {
    pub fn torso(&self) -> &LinkState {
        &self.links[0]
    }

    pub fn torso_height(&self) -> f64 {
        self.links[0].position[1]
    }

    pub fn pitch(&self) -> f64 {
        self.link_angles[0]
    }

    pub fn speed(&self) -> f64 {
        (self.heading_velocity[0].powi(2) + self.heading_velocity[1].powi(2)).sqrt()
    }

    pub fn is_valid_layout(&self) -> bool {
        self.links.len() == NUM_LINKS && self.link_angles.len() == NUM_LINKS
    }

    /// Contact vector as 0/1 values.
    pub fn contact_vector(&self) -> [f64; NUM_LEGS] {
        self.contacts.map(|c| if c { 1.0 } else { 0.0 })
    }
}

pub fn heading_velocity(com_vx: f64, yaw: f64) -> [f64; 2] {
    [com_vx * yaw.cos(), -com_vx * yaw.sin()]
}
