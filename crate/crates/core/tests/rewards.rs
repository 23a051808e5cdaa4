use proptest::prelude::*;
use std::f64::consts::PI;
use strider_core::env::{AgentState, EnvConfig, LinkState, QuadrupedEnv};
use strider_core::rewards::*;

fn base_state() -> AgentState {
    let mut env = QuadrupedEnv::new(Default::default(), EnvConfig::default()).unwrap();
    env.reset_nominal(0.0).unwrap();
    env.observe()
}

/// Rotates link `l` (and nothing else) by `delta` about the plane normal.
fn twist(s: &AgentState, l: usize, delta: f64) -> AgentState {
    let mut out = s.clone();
    let old = &s.links[l];
    let a = old.angle() + delta;
    out.links[l] = LinkState::planar(old.position[0], old.position[1], a, old.velocity[0], old.velocity[1], old.angular_velocity[2]);
    out.link_angles[l] = a;
    out
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() < tol, "{a} vs {b}");
}

#[test]
fn weights_are_the_published_constants() {
    let w = RewardWeights::default();
    assert_eq!((w.pose, w.vel, w.com, w.contact), (0.65, 0.1, 0.1, 0.15));
    assert_eq!((w.lambda_contact, w.lambda_speed), (5.0, 0.8));
    assert!(w.validate().is_ok());
    assert!(RewardWeights { pose: 0.7, ..w }.validate().is_err());
}

#[test]
fn perfect_match_scores_one() {
    let s = base_state();
    let w = RewardWeights::default();
    assert_eq!(r_pose(&s, &s), 1.0);
    assert_eq!(r_vel(&s, &s), 1.0);
    assert_eq!(r_com(&s, &s), 1.0);
    assert_eq!(r_contact(&s, &s, 5.0), 1.0);
    assert_eq!(r_imitation(&s, &s, &w), 1.0);
}

#[test]
fn pose_single_joint_error() {
    let s = base_state();
    // Lower link of the left-front leg: only the knee's relative rotation moves.
    let r = twist(&s, 2, 0.5);
    close(r_pose(&s, &r), (-2.0f64 * 0.25).exp(), 1e-12);
    close(r_pose(&s, &r), 0.6065, 1e-4);
    // Upper link: hip and knee relative rotations both change by 0.5.
    let r = twist(&s, 1, 0.5);
    close(r_pose(&s, &r), (-2.0f64 * 0.5).exp(), 1e-12);
}

#[test]
fn pose_error_wraps_to_pi() {
    let s = base_state();
    let a = r_pose(&s, &twist(&s, 2, PI - 0.1));
    let b = r_pose(&s, &twist(&s, 2, PI + 0.1));
    close(a, b, 1e-12);
    close(quat_angle([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]), PI, 1e-12);
    close(quat_angle([1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]), 0.0, 1e-12);
}

#[test]
fn pose_strictly_decreasing_in_error() {
    let s = base_state();
    let mut prev = 1.0;
    for i in 1..=30 {
        let v = r_pose(&s, &twist(&s, 4, i as f64 * 0.1));
        assert!(v < prev);
        prev = v;
    }
}

#[test]
fn velocity_examples() {
    let s = base_state();
    let mut r = s.clone();
    r.joint_velocities[3] += 1.0;
    close(r_vel(&s, &r), (-0.1f64).exp(), 1e-12);
    close(r_vel(&s, &r), 0.9048, 1e-4);
    let mut r2 = s.clone();
    r2.joint_velocities[3] -= 1.0;
    assert_eq!(r_vel(&s, &r), r_vel(&s, &r2));
}

#[test]
fn com_examples() {
    let s = base_state();
    let mut r = s.clone();
    r.ground_track[0] += 0.1;
    close(r_com(&s, &r), (-0.1f64).exp(), 1e-12);
    r.ground_track[0] += 0.9;
    close(r_com(&s, &r), 4.54e-5, 1e-7);
    let mut v = s.clone();
    v.com[1] += 0.5;
    assert_eq!(r_com(&s, &v), 1.0, "vertical offset is ignored");
    let mut side = s.clone();
    side.ground_track[1] -= 0.1;
    close(r_com(&s, &side), (-0.1f64).exp(), 1e-12);
}

#[test]
fn contact_examples() {
    let s = base_state();
    let mut r = s.clone();
    r.contacts = s.contacts.map(|c| !c);
    close(r_contact(&s, &r, 5.0), 6.7379e-3, 1e-7);
    let mut one = s.clone();
    one.contacts[2] = !one.contacts[2];
    close(r_contact(&s, &one, 5.0), 0.2865, 1e-4);
    // Only the count matters.
    let mut other = s.clone();
    other.contacts[0] = !other.contacts[0];
    assert_eq!(r_contact(&s, &one, 5.0), r_contact(&s, &other, 5.0));
}

#[test]
fn speed_and_heading_examples() {
    assert_eq!(r_speed(1.5, [1.5, 0.0], 0.8), 1.0);
    close(r_speed(2.0, [1.0, 0.0], 0.8), 0.4493, 1e-4);
    close(r_speed(1.0, [0.0, -1.5], 0.8), 0.8187, 1e-4);
    let th = 0.7f64;
    let u = [th.cos(), -th.sin()];
    close(r_heading(th, [2.0 * u[0], 2.0 * u[1]]), 1.0, 1e-12);
    close(r_heading(th, [-u[0], -u[1]]), 0.0, 1e-12);
    close(r_heading(th, [u[1], -u[0]]), 0.5, 1e-12);
    assert_eq!(r_heading(th, [0.0, 0.0]), 0.5);
}

fn perturbed(s: &AgentState, e: &[f64; 6], flips: u8) -> AgentState {
    let mut r = twist(s, 2, e[0]);
    r = twist(&r, 5, e[1]);
    r.joint_velocities[0] += e[2];
    r.links[0].angular_velocity[2] += e[3];
    r.ground_track[0] += e[4];
    r.ground_track[1] += e[5];
    for leg in 0..4 {
        if flips & (1 << leg) != 0 {
            r.contacts[leg] = !r.contacts[leg];
        }
    }
    r
}

proptest! {
    #[test]
    fn rewards_bounded_and_deterministic(e in prop::array::uniform6(-10.0f64..10.0), flips in 0u8..16) {
        let s = base_state();
        let r = perturbed(&s, &e, flips);
        let w = RewardWeights::default();
        for v in [r_pose(&s, &r), r_vel(&s, &r), r_com(&s, &r), r_contact(&s, &r, 5.0), r_imitation(&s, &r, &w)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r_imitation(&s, &r, &w).to_bits(), r_imitation(&s, &r, &w).to_bits());
        let v = [e[0], e[1]];
        prop_assert!((0.0..=1.0).contains(&r_speed(e[2].abs(), v, 0.8)));
        prop_assert!((0.0..=1.0).contains(&r_heading(e[3], v)));
    }

    #[test]
    fn imitation_monotone_in_each_error(e in prop::array::uniform6(0.0f64..1.0), t in 1.0f64..2.0) {
        let s = base_state();
        let w = RewardWeights::default();
        let base = r_imitation(&s, &perturbed(&s, &e, 0), &w);
        for i in 0..6 {
            let mut f = e;
            f[i] *= t;
            prop_assert!(r_imitation(&s, &perturbed(&s, &f, 0), &w) <= base + 1e-15);
        }
        prop_assert!(r_imitation(&s, &perturbed(&s, &e, 1), &w) <= base);
    }
}
