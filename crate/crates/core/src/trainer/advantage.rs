/// Generalised advantage estimates for one trajectory.
///
/// `values[t] = V(s_t)`; `bootstrap` is `V(s_T)` for a truncated episode and
/// 0 for a terminated one.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// λ-returns `G_t = r_t + γ[(1−λ)V(s_{t+1}) + λG_{t+1}]`, `G_T = bootstrap`.
pub fn td_lambda_targets(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut g = bootstrap;
    for t in (0..n).rev() {
        let v_next = if t + 1 < n { values[t + 1] } else { bootstrap };
        g = rewards[t] + gamma * ((1.0 - lambda) * v_next + lambda * g);
        out[t] = g;
    }
    out
}

/// In-place standardisation to mean 0 and unit std (`ε = 1e-8`).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}
