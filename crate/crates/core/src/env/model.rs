use crate::physics::{wrap_angle, Vec2};
use serde::{Deserialize, Serialize};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 8;
pub const NUM_LINKS: usize = 9;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["left_front", "right_front", "left_rear", "right_rear"];

/// Link index of leg `leg`'s upper segment; the lower segment follows it.
pub fn upper_link(leg: usize) -> usize {
    1 + 2 * leg
}

pub fn lower_link(leg: usize) -> usize {
    2 + 2 * leg
}

pub fn hip_joint(leg: usize) -> usize {
    2 * leg
}

pub fn knee_joint(leg: usize) -> usize {
    2 * leg + 1
}

/// Parent link of each non-torso link.
pub fn parent_link(link: usize) -> usize {
    if link % 2 == 1 {
        0
    } else {
        link - 1
    }
}

/// Geometry, masses and actuation of the planar quadruped.
///
/// Joint angle 0 is a leg hanging straight down; positive angles swing the
/// distal end forward (+x). Knees bend with negative angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrupedModel {
    pub torso_size: [f64; 2],
    pub torso_mass: f64,
    pub upper_length: f64,
    pub lower_length: f64,
    pub leg_radius: f64,
    pub upper_mass: f64,
    pub lower_mass: f64,
    /// Torso-local x of the front and rear hips; both sit at `hip_y`.
    pub hip_x: [f64; 2],
    pub hip_y: f64,
    pub hip_limit: f64,
    pub knee_limits: [f64; 2],
    pub kp: f64,
    pub kd_hip: f64,
    pub kd_knee: f64,
    pub max_torque: f64,
    pub friction: f64,
    /// Vertical hip-to-foot distance of the standing pose.
    pub nominal_depth: f64,
}

impl Default for QuadrupedModel {
    fn default() -> Self {
        Self {
            torso_size: [0.6, 0.2],
            torso_mass: 20.0,
            upper_length: 0.25,
            lower_length: 0.25,
            leg_radius: 0.03,
            upper_mass: 1.0,
            lower_mass: 0.5,
            hip_x: [0.25, -0.25],
            hip_y: -0.1,
            hip_limit: 1.9,
            knee_limits: [-2.4, -0.1],
            kp: 300.0,
            kd_hip: 6.0,
            kd_knee: 3.0,
            max_torque: 150.0,
            friction: 0.8,
            nominal_depth: 0.42,
        }
    }
}

/// Planar pose of one link: centre of mass and absolute angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPose {
    pub position: Vec2,
    pub angle: f64,
}

/// Unit vector along a leg segment rotated by `angle` from straight down.
pub fn segment_dir(angle: f64) -> Vec2 {
    Vec2::new(angle.sin(), -angle.cos())
}

impl QuadrupedModel {
    pub fn total_mass(&self) -> f64 {
        self.torso_mass + NUM_LEGS as f64 * (self.upper_mass + self.lower_mass)
    }

    pub fn link_mass(&self, link: usize) -> f64 {
        match link {
            0 => self.torso_mass,
            l if l % 2 == 1 => self.upper_mass,
            _ => self.lower_mass,
        }
    }

    pub fn segment_length(&self, link: usize) -> f64 {
        if link % 2 == 1 {
            self.upper_length
        } else {
            self.lower_length
        }
    }

    /// Hip anchor in torso-local coordinates.
    pub fn hip_local(&self, leg: usize) -> Vec2 {
        Vec2::new(if leg < 2 { self.hip_x[0] } else { self.hip_x[1] }, self.hip_y)
    }

    pub fn joint_limits(&self, joint: usize) -> (f64, f64) {
        if joint % 2 == 0 {
            (-self.hip_limit, self.hip_limit)
        } else {
            (self.knee_limits[0], self.knee_limits[1])
        }
    }

    pub fn clamp_targets(&self, targets: &mut [f64; NUM_JOINTS]) {
        for (j, t) in targets.iter_mut().enumerate() {
            let (lo, hi) = self.joint_limits(j);
            *t = t.clamp(lo, hi);
        }
    }

    /// Torso centre height of the standing pose over flat ground at 0.
    pub fn nominal_height(&self) -> f64 {
        self.nominal_depth + self.leg_radius - self.hip_y
    }

    /// Joint angles of the standing pose: feet directly below the hips.
    pub fn nominal_angles(&self) -> [f64; NUM_JOINTS] {
        let (l1, l2) = (self.upper_length, self.lower_length);
        let d = self.nominal_depth;
        let knee = -((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0).acos();
        let hip = -(l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        let mut out = [0.0; NUM_JOINTS];
        for leg in 0..NUM_LEGS {
            out[hip_joint(leg)] = hip;
            out[knee_joint(leg)] = knee;
        }
        out
    }

    /// Forward kinematics of every link from the torso pose and joint angles.
    pub fn link_poses(&self, torso: Vec2, pitch: f64, joints: &[f64; NUM_JOINTS]) -> [LinkPose; NUM_LINKS] {
        let mut out = [LinkPose {
            position: torso,
            angle: pitch,
        }; NUM_LINKS];
        for leg in 0..NUM_LEGS {
            let hip = torso + crate::physics::rotate(pitch, self.hip_local(leg));
            let a1 = pitch + joints[hip_joint(leg)];
            let a2 = a1 + joints[knee_joint(leg)];
            let knee = hip + segment_dir(a1) * self.upper_length;
            out[upper_link(leg)] = LinkPose {
                position: hip + segment_dir(a1) * (self.upper_length / 2.0),
                angle: a1,
            };
            out[lower_link(leg)] = LinkPose {
                position: knee + segment_dir(a2) * (self.lower_length / 2.0),
                angle: a2,
            };
        }
        out
    }

    /// Segment end of each lower leg (the foot sphere centre) in world coordinates.
    pub fn foot_points(&self, poses: &[LinkPose; NUM_LINKS]) -> [Vec2; NUM_LEGS] {
        std::array::from_fn(|leg| {
            let p = poses[lower_link(leg)];
            p.position + segment_dir(p.angle) * (self.lower_length / 2.0)
        })
    }

    pub fn com(&self, poses: &[LinkPose; NUM_LINKS]) -> Vec2 {
        let m: Vec2 = (0..NUM_LINKS).map(|l| poses[l].position * self.link_mass(l)).sum();
        m / self.total_mass()
    }

    /// Joint angles implied by absolute link angles.
    pub fn joint_angles(&self, poses: &[LinkPose; NUM_LINKS]) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|j| {
            let child = j + 1;
            wrap_angle(poses[child].angle - poses[parent_link(child)].angle)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_layout() {
        assert_eq!(upper_link(0), 1);
        assert_eq!(lower_link(3), 8);
        assert_eq!(parent_link(4), 3);
        assert_eq!(parent_link(5), 0);
        assert_eq!(knee_joint(2), 5);
    }

    #[test]
    fn nominal_pose_puts_feet_on_ground_under_hips() {
        let m = QuadrupedModel::default();
        let torso = Vec2::new(1.0, m.nominal_height());
        let poses = m.link_poses(torso, 0.0, &m.nominal_angles());
        for (leg, f) in m.foot_points(&poses).iter().enumerate() {
            assert!((f.y - m.leg_radius).abs() < 1e-12);
            assert!((f.x - (torso.x + m.hip_local(leg).x)).abs() < 1e-12);
        }
        let angles = m.joint_angles(&poses);
        for (a, b) in angles.iter().zip(m.nominal_angles()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((m.nominal_height() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn nominal_angles_within_limits() {
        let m = QuadrupedModel::default();
        for (j, a) in m.nominal_angles().iter().enumerate() {
            let (lo, hi) = m.joint_limits(j);
            assert!(*a >= lo && *a <= hi, "joint {j}: {a}");
        }
    }
}
