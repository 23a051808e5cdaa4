use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use strider_core::env::{AgentState, EnvConfig, QuadrupedEnv};
use strider_core::eval::*;
use strider_core::refmotion::Command;

fn base_state() -> AgentState {
    let mut env = QuadrupedEnv::new(Default::default(), EnvConfig::default()).unwrap();
    env.reset_nominal(0.0).unwrap();
    env.observe()
}

fn recording(speeds: &[f64], sigma: f64) -> Recording {
    let s = base_state();
    let states = speeds
        .iter()
        .map(|&v| {
            let mut x = s.clone();
            x.heading_velocity = [v * 0.6, -v * 0.8];
            x
        })
        .collect::<Vec<_>>();
    let n = states.len();
    Recording::new(RecordingMeta::default(), 30, states, vec![Command::new(sigma, 0.0); n]).unwrap()
}

#[test]
fn speed_mse_examples() {
    assert_eq!(recording_speed_mse(&recording(&[1.2; 30], 1.2)), 0.0);
    let e = recording_speed_mse(&recording(&[0.9; 30], 1.0));
    assert!((e - 0.01).abs() < 1e-15, "{e}");
    let mut buckets = BTreeMap::new();
    buckets.insert("pace".to_string(), vec![recording(&[1.0; 10], 1.0), recording(&[0.8; 10], 1.0)]);
    buckets.insert("trot".to_string(), vec![]);
    let out = speed_mse(&buckets);
    assert!(!out.contains_key("trot"));
    let p = out["pace"];
    assert_eq!(p.n, 2);
    assert!((p.mean - 0.02).abs() < 1e-12 && (p.std - 0.02).abs() < 1e-12);
    assert!(Recording::new(RecordingMeta::default(), 30, vec![], vec![]).is_err());
}

#[test]
fn heading_deviation_examples() {
    let script = [(2.0, Command::new(1.0, 0.5 * PI)), (1.0, Command::new(1.0, 0.0))];
    let start = TrackPoint { yaw: 0.0, position: [3.0, -1.0] };
    let arc = reference_arc(&script, 30, start);
    assert_eq!(arc.len(), 91);
    assert!((arc.last().unwrap().yaw - 0.5 * PI).abs() < 1e-12);
    let d = heading_deviation(&arc, &arc).unwrap();
    assert_eq!((d.angular_deg, d.positional_m, d.truncated), (0.0, 0.0, false));
    let shifted: Vec<TrackPoint> = arc.iter().map(|p| TrackPoint { yaw: p.yaw + 0.1, ..*p }).collect();
    let d = heading_deviation(&shifted, &arc).unwrap();
    assert!((d.angular_deg - 5.729577951308232).abs() < 1e-9);
    assert!(d.positional_m.abs() < 1e-12);
    // Alignment at the first point removes a constant offset.
    let moved: Vec<TrackPoint> = arc.iter().map(|p| TrackPoint { position: [p.position[0] + 5.0, p.position[1]], ..*p }).collect();
    assert!(heading_deviation(&moved, &arc).unwrap().positional_m < 1e-12);
    let d = heading_deviation(&arc[..40], &arc).unwrap();
    assert!(d.truncated);
    assert!(heading_deviation(&[], &arc).is_err());
}

#[test]
fn left_turn_arc_is_a_quarter_circle() {
    let arc = reference_arc(&[(PI / 2.0, Command::new(1.0, 0.5 * PI))], 1200, TrackPoint { yaw: 0.0, position: [0.0, 0.0] });
    let end = arc.last().unwrap().position;
    // Radius v/ω with the duration rounded to whole frames; a left turn from
    // heading +x ends near (r, -r) in planar (x, -z) coordinates.
    let r = (PI / 2.0 * 1200.0).round() / 1200.0 / (PI / 2.0);
    assert!((end[0] - r).abs() < 1e-6 && (end[1] + r).abs() < 1e-6, "{end:?}");
}

fn feet_states(offset: f64, n: usize) -> Vec<AgentState> {
    let s = base_state();
    (0..n)
        .map(|i| {
            let mut x = s.clone();
            for leg in 0..4 {
                x.feet[leg] = [offset + 0.01 * i as f64, -0.4 + leg as f64];
            }
            x
        })
        .collect()
}

#[test]
fn end_effector_iou_examples() {
    let a = feet_states(0.0, 50);
    let r = end_effector_iou(&a, &a, 0.02).unwrap();
    assert_eq!(r.per_leg, [1.0; 4]);
    assert_eq!(r.average, 1.0);
    let b = feet_states(10.0, 50);
    assert_eq!(end_effector_iou(&a, &b, 0.02).unwrap().average, 0.0);
    let c = feet_states(0.13, 50);
    let (x, y) = (end_effector_iou(&a, &c, 0.02).unwrap(), end_effector_iou(&c, &a, 0.02).unwrap());
    assert_eq!(x, y);
    assert!(x.average > 0.0 && x.average < 1.0);
    let e = end_effector_iou(&[], &[], 0.02).unwrap();
    assert_eq!(e.empty, [true; 4]);
    assert_eq!(e.average, 0.0);
    assert!(end_effector_iou(&a, &a, 0.0).is_err());
}

fn circle_10d(n: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Orthonormal pair in 10-D via Gram-Schmidt.
    let mut u: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= nu);
    let mut v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(x, a)| *x -= d * a);
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            (0..10).map(|k| 2.0 + t.cos() * u[k] + t.sin() * v[k] + noise * rng.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

#[test]
fn pca_circle_in_ten_dimensions() {
    let x = circle_10d(400, 1e-6, 1);
    let p = pca_project(&x).unwrap();
    assert!(p.explained[0] + p.explained[1] > 0.999);
    assert!(!p.rank_deficient);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    assert!((dot(&p.components[0], &p.components[0]) - 1.0).abs() < 1e-9);
    assert!((dot(&p.components[1], &p.components[1]) - 1.0).abs() < 1e-9);
    assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-9);
    let origin = p.project(&p.mean);
    assert_eq!(origin, [0.0, 0.0]);
    assert_eq!(p.points.len(), 400);
    for c in &p.components {
        assert!(c.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
    }
}

/// Covariance power iteration, independent of the eigen solver.
fn power_top(x: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut v = vec![1.0; d];
    let mut lam = 0.0;
    for _ in 0..500 {
        let mut w = vec![0.0; d];
        for r in x {
            let p: f64 = (0..d).map(|j| (r[j] - mean[j]) * v[j]).sum();
            for j in 0..d {
                w[j] += (r[j] - mean[j]) * p / n;
            }
        }
        lam = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = w.iter().map(|a| a / lam).collect();
    }
    (v, lam)
}

#[test]
fn pca_matches_power_iteration_and_is_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            vec![a + 0.2 * b, 0.5 * a - b, rng.random_range(-0.1..0.1), 0.3 * b]
        })
        .collect();
    let p = pca_project(&x).unwrap();
    let (v, lam) = power_top(&x);
    let total: f64 = {
        let d = 4;
        let n = x.len() as f64;
        (0..d)
            .map(|j| {
                let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
                x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
            })
            .sum()
    };
    assert!((p.explained[0] - lam / total).abs() < 1e-9);
    let cos: f64 = p.components[0].iter().zip(&v).map(|(a, b)| a * b).sum();
    assert!((cos.abs() - 1.0).abs() < 1e-9);
    let mut rev = x.clone();
    rev.reverse();
    let q = pca_project(&rev).unwrap();
    for (a, b) in p.components.iter().zip(&q.components) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9));
    }
    assert!(pca_project(&x[..9]).is_err());
}

#[test]
fn pca_flags_rank_deficiency() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
    let p = pca_project(&x).unwrap();
    assert!(p.rank_deficient);
    assert!((p.explained[0] - 1.0).abs() < 1e-12);
}

#[test]
fn occupancy_overlap_examples() {
    let a = [[0.01, 0.01], [0.2, 0.3]];
    assert_eq!(occupancy_overlap(&a, &a, 0.05), 1.0);
    assert_eq!(occupancy_overlap(&a, &[[5.0, 5.0]], 0.05), 0.0);
    assert_eq!(occupancy_overlap(&a, &[[0.02, 0.02]], 0.05), 0.5);
}

fn sample_report() -> MetricReport {
    let mut r = MetricReport { config_hash: "cfg123".into(), checkpoint_hash: "ck456".into(), ..Default::default() };
    r.push("speed_mse/pace", "rec0", 0.0016);
    r.push("speed_mse/pace", "rec1", 0.0018);
    r.push("iou", "rec0", 0.62);
    r.points.insert("pca".into(), (0..17).map(|i| [i as f64, -(i as f64)]).collect());
    r
}

#[test]
fn report_files_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r = sample_report();
    let fa = emit_report(&r, a.path()).unwrap();
    let fb = emit_report(&r, b.path()).unwrap();
    assert_eq!(fa.len(), 4);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let csv = std::fs::read_to_string(a.path().join("speed_mse_pace.csv")).unwrap();
    assert!(csv.starts_with("recording,value\n"));
    assert_eq!(csv.lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], "cfg123");
    assert_eq!(summary["checkpoint_hash"], "ck456");
    assert!((summary["metrics"]["speed_mse/pace"]["mean"].as_f64().unwrap() - 0.0017).abs() < 1e-12);
    let pts = std::fs::read_to_string(a.path().join("points_pca.txt")).unwrap();
    assert_eq!(pts.lines().count(), 17);
}

#[test]
fn unwritable_report_dir_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let file = d.path().join("blocker");
    std::fs::write(&file, b"x").unwrap();
    let target = file.join("out");
    assert!(emit_report(&sample_report(), &target).is_err());
    assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
}
