//! Self-checks runnable from the command line: composition, gradient,
//! reward and physics suites against brute-force references.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;
use strider_core::adapter::{d_loss, g_loss, Discriminator};
use strider_core::env::{EnvConfig, QuadrupedEnv, QuadrupedModel};
use strider_core::nn::{compare_grads, finite_diff_subset, DenseNet, Tensor};
use strider_core::physics::{RevoluteJoint, RigidBody, Vec2, World, WorldConfig};
use strider_core::policy::{compose_general, GatingKind, GatingNet};
use strider_core::rewards::{r_contact, r_heading, r_imitation, r_speed, RewardWeights};
use strider_core::trainer::{l_reg, l_reg_grad, value_loss, value_net};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn suite(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    match f() {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult { name, passed: false, detail: format!("error: {e:#}") },
    }
}

/// Mean and variance of the normalised weighted product of 1-D Gaussians on
/// a uniform grid. The product factorises over dimensions for diagonal
/// covariances, so each dimension is checked on its own grid.
fn grid_moments(w: &[f64], mu: &[f64], var: &[f64]) -> (f64, f64) {
    let prec: f64 = w.iter().zip(var).map(|(w, v)| w / v).sum();
    let centre = w.iter().zip(mu).zip(var).map(|((w, m), v)| w * m / v).sum::<f64>() / prec;
    let half = 12.0 / prec.sqrt();
    let n = 40_001;
    let h = 2.0 * half / (n - 1) as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    let lp: Vec<f64> = (0..n)
        .map(|j| {
            let x = centre - half + j as f64 * h;
            (0..w.len()).map(|i| -w[i] * (x - mu[i]).powi(2) / (2.0 * var[i])).sum()
        })
        .collect();
    let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (j, l) in lp.iter().enumerate() {
        let x = centre - half + j as f64 * h;
        let p = (l - top).exp();
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

fn composition() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = rng.random_range(1..=8);
        let d = rng.random_range(1..=4);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..2.0)).collect();
        let mu: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let var: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(0.02..1.0)).collect()).collect();
        let cg = compose_general(&w, &mu, &var)?;
        for j in 0..d {
            let m: Vec<f64> = mu.iter().map(|r| r[j]).collect();
            let v: Vec<f64> = var.iter().map(|r| r[j]).collect();
            let (gm, gv) = grid_moments(&w, &m, &v);
            mean_err = mean_err.max((cg.mean[j] - gm).abs());
            var_err = var_err.max(((cg.var[j] - gv) / gv).abs());
        }
    }
    Ok((mean_err < 1e-6 && var_err < 1e-5, format!("200 cases, max mean error {mean_err:.2e}, max variance rel error {var_err:.2e}")))
}

fn fd(net: &DenseNet, analytic: &[f64], f: impl FnMut(&DenseNet) -> f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..100).map(|_| rng.random_range(0..net.param_count())).collect();
    let num = finite_diff_subset(f, net, &idx, 1e-6);
    let a: Vec<f64> = idx.iter().map(|&i| analytic[i]).collect();
    let rep = compare_grads(&a, &num, 1e-7);
    if rep.max_abs_error >= 1e-7 {
        f64::INFINITY
    } else {
        rep.max_rel_error
    }
}

fn gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d);
    let k = 4;
    let mut report = Vec::new();

    let v = value_net("value", 6, &[16, 16], &mut rng);
    let x: Vec<f64> = (0..192).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, g) = value_loss(&v, &x, &targets)?;
    report.push(("value_loss", fd(&v, &g.flat(), |n| value_loss(n, &x, &targets).map_or(f64::NAN, |r| r.0), 1)));

    let a = value_net("gating_high", 6, &[16], &mut rng);
    let b = value_net("gating_high", 6, &[16], &mut rng);
    let g = l_reg_grad(&a, &b)?.flat();
    report.push(("l_reg", fd(&a, &g, |n| l_reg(n, &b).unwrap_or(f64::NAN), 2)));

    let w = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n * k).map(|_| rng.random_range(0.05..1.5)).collect() };
    let d = Discriminator::new(k, &[16, 16], &mut rng);
    let (wr, wf) = (w(&mut rng, 24), w(&mut rng, 24));
    let g = d_loss(&d, &wr, &wf)?.grads.flat();
    report.push(("d_loss", fd(&d.net, &g, |n| Discriminator::from_net(n.clone()).and_then(|d| d_loss(&d, &wr, &wf)).map_or(f64::NAN, |l| l.total), 3)));

    let gen = GatingNet::new(GatingKind::HighLevel, 6, 2, &[16], k, &mut rng);
    let inputs = Tensor::matrix(24, 8, (0..192).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let g = g_loss(&gen, &d, &inputs, &wr, 1.0, 100.0)?.grads.flat();
    report.push((
        "g_loss",
        fd(&gen.net, &g, |n| {
            GatingNet::from_net(GatingKind::HighLevel, n.clone(), 6)
                .map_err(|e| e.to_string())
                .and_then(|gn| g_loss(&gn, &d, &inputs, &wr, 1.0, 100.0).map_err(|e| e.to_string()))
                .map_or(f64::NAN, |l| l.total)
        }, 4),
    ));

    let passed = report.iter().all(|(_, e)| *e < 1e-4);
    let detail = report.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    Ok((passed, format!("max rel error over 100 parameters: {detail}")))
}

fn rewards() -> Result<(bool, String)> {
    let mut env = QuadrupedEnv::new(QuadrupedModel::default(), EnvConfig::default())?;
    env.reset_nominal(0.0)?;
    let s = env.observe();
    let mut a = s.clone();
    let mut b = s.clone();
    a.contacts = [true; 4];
    b.contacts = [false; 4];
    let contact = r_contact(&a, &b, 5.0);
    let speed = r_speed(1.0, [0.0, 0.0], 0.8);
    let heading = r_heading(FRAC_PI_2, [1.0, 0.0]);
    let perfect = r_imitation(&s, &s, &RewardWeights::default());
    let ok = (contact - 6.7379e-3).abs() < 1e-7 && (speed - 0.44933).abs() < 1e-5 && heading == 0.5 && perfect == 1.0;
    Ok((ok, format!("contact {contact:.7e}, speed {speed:.5}, heading {heading}, perfect imitation {perfect}")))
}

fn physics() -> Result<(bool, String)> {
    let mut w = World::new(WorldConfig { ground: None, ..WorldConfig::default() })?;
    let id = w.add_body(RigidBody::solid_box(0.2, 0.2, 10.0)?.with_pose(Vec2::new(0.0, 10.0), 0.0));
    let dt = w.dt();
    let g = -w.config.gravity.y;
    let n = (1.0 / dt).round() as u64;
    for _ in 0..n {
        w.step(&[])?;
    }
    let oracle = g * dt * dt * (n * (n + 1)) as f64 / 2.0;
    let drop_err = (10.0 - w.body(id).position.y - oracle).abs();

    let mut p = World::new(WorldConfig { ground: None, ..WorldConfig::default() })?;
    let l = 0.5;
    let a = p.add_body(RigidBody::rod(l, 0.02, 1.0)?.with_pose(Vec2::new(l / 2.0, 0.0), FRAC_PI_2));
    let b = p.add_body(RigidBody::rod(l, 0.02, 1.0)?.with_pose(Vec2::new(l, -l / 2.0), 0.0));
    for id in [a, b] {
        p.body_mut(id).collision_group = 1;
    }
    p.add_joint(RevoluteJoint::new(None, a, Vec2::ZERO, Vec2::new(0.0, l / 2.0)))?;
    p.add_joint(RevoluteJoint::new(Some(a), b, Vec2::new(0.0, -l / 2.0), Vec2::new(0.0, l / 2.0)))?;
    let e0 = p.total_energy();
    let mut drift = 0.0f64;
    for _ in 0..(10.0 / p.dt()).round() as u64 {
        p.step(&[0.0, 0.0])?;
        drift = drift.max((p.total_energy() - e0).abs());
    }
    let energy_rel = drift / e0.abs();
    Ok((drop_err < 1e-6 && energy_rel < 0.02, format!("free-fall error {drop_err:.2e} m, pendulum energy drift {:.2}%", 100.0 * energy_rel)))
}

/// Runs every suite; the caller decides how to report.
pub fn run_all() -> Vec<SuiteResult> {
    vec![
        suite("composition", composition),
        suite("gradients", gradients),
        suite("rewards", rewards),
        suite("physics", physics),
    ]
}
