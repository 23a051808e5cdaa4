use super::RefError;
use crate::env::model::segment_dir;
use crate::physics::Vec2;

/// Foot point of a two-segment leg hanging from `hip`.
pub fn two_link_fk(hip: Vec2, hip_angle: f64, knee_angle: f64, l1: f64, l2: f64) -> Vec2 {
    hip + segment_dir(hip_angle) * l1 + segment_dir(hip_angle + knee_angle) * l2
}

/// Analytic inverse kinematics on the negative-knee branch.
pub fn two_link_ik(hip: Vec2, target: Vec2, l1: f64, l2: f64) -> Result<(f64, f64), RefError> {
    let p = target - hip;
    let d = p.length();
    let (inner, outer) = ((l1 - l2).abs(), l1 + l2);
    let tol = 1e-12 * outer;
    if d > outer + tol {
        return Err(RefError::Unreachable { deficit: d - outer });
    }
    if d < inner - tol {
        return Err(RefError::Unreachable { deficit: inner - d });
    }
    let cos_k = ((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let knee = -cos_k.acos();
    let phi = p.x.atan2(-p.y);
    let hip_angle = phi - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
    Ok((hip_angle, knee))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_down_full_reach() {
        let (h, k) = two_link_ik(Vec2::ZERO, Vec2::new(0.0, -0.5), 0.25, 0.25).unwrap();
        assert!(h.abs() < 1e-12);
        assert!(k.abs() < 1e-6);
    }

    #[test]
    fn inner_edge_folds() {
        let (h, k) = two_link_ik(Vec2::ZERO, Vec2::new(0.0, -0.1), 0.3, 0.2).unwrap();
        assert!((k + std::f64::consts::PI).abs() < 1e-6);
        let f = two_link_fk(Vec2::ZERO, h, k, 0.3, 0.2);
        assert!((f - Vec2::new(0.0, -0.1)).length() < 1e-9);
    }

    #[test]
    fn unreachable_reports_deficit() {
        match two_link_ik(Vec2::ZERO, Vec2::new(0.0, -0.6), 0.25, 0.25) {
            Err(RefError::Unreachable { deficit }) => assert!((deficit - 0.1).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }
}
