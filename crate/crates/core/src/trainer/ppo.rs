use super::advantage::{gae, normalize_advantages, td_lambda_targets};
use super::config::PpoConfig;
use super::rollout::Trajectory;
use super::TrainError;
use crate::nn::{Activation, AdamState, DenseNet, NetGrads, Tensor};
use crate::policy::{log_prob, CompositeGaussian, Level, McpPolicy, PolicyGrads};
use rand::seq::SliceRandom;
use rand::Rng;

/// Flattened, row-major training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    /// GAE advantages (normalised over the whole batch) and TD(λ) targets.
    pub fn from_trajectories(trajs: &[Trajectory], cfg: &PpoConfig) -> Result<Self, TrainError> {
        let first = trajs
            .iter()
            .find(|t| !t.is_empty())
            .ok_or_else(|| TrainError::Config("no experience to train on".into()))?;
        let (sd, cd, ad) = (first.states[0].len(), first.controls[0].len(), first.actions[0].len());
        let mut b = Batch {
            n: 0,
            state_dim: sd,
            control_dim: cd,
            action_dim: ad,
            states: Vec::new(),
            controls: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            advantages: Vec::new(),
            targets: Vec::new(),
        };
        for t in trajs {
            if !t.is_consistent() {
                return Err(TrainError::Config(format!("trajectory {} has ragged arrays", t.episode)));
            }
            b.advantages.extend(gae(&t.rewards, &t.values, t.bootstrap, cfg.gamma, cfg.gae_lambda));
            b.targets.extend(td_lambda_targets(&t.rewards, &t.values, t.bootstrap, cfg.gamma, cfg.td_lambda));
            for i in 0..t.len() {
                b.states.extend_from_slice(&t.states[i]);
                b.controls.extend_from_slice(&t.controls[i]);
                b.actions.extend_from_slice(&t.actions[i]);
            }
            b.log_probs.extend_from_slice(&t.log_probs);
            b.n += t.len();
        }
        normalize_advantages(&mut b.advantages);
        Ok(b)
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        let pick = |src: &[f64], w: usize| -> Vec<f64> { idx.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect() };
        Batch {
            n: idx.len(),
            state_dim: self.state_dim,
            control_dim: self.control_dim,
            action_dim: self.action_dim,
            states: pick(&self.states, self.state_dim),
            controls: pick(&self.controls, self.control_dim),
            actions: pick(&self.actions, self.action_dim),
            log_probs: pick(&self.log_probs, 1),
            advantages: pick(&self.advantages, 1),
            targets: pick(&self.targets, 1),
        }
    }

    /// `[state | control]` rows, the value-network input.
    pub fn value_inputs(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n * (self.state_dim + self.control_dim));
        for r in 0..self.n {
            x.extend_from_slice(&self.states[r * self.state_dim..(r + 1) * self.state_dim]);
            x.extend_from_slice(&self.controls[r * self.control_dim..(r + 1) * self.control_dim]);
        }
        x
    }
}

pub fn value_net<R: Rng + ?Sized>(name: &str, input_dim: usize, hidden: &[usize], rng: &mut R) -> DenseNet {
    let mut shape: Vec<(usize, Activation)> = hidden.iter().map(|&h| (h, Activation::Relu)).collect();
    shape.push((1, Activation::Linear));
    DenseNet::new(name, input_dim, &shape, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateStats {
    pub mean_ratio: f64,
    pub max_ratio_error: f64,
    pub clip_fraction: f64,
}

/// Clipped surrogate, negated for minimisation:
/// `L = −(1/B) Σ min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn surrogate_loss(policy: &McpPolicy, level: Level, mb: &Batch, clip: f64) -> Result<(f64, PolicyGrads, SurrogateStats), TrainError> {
    let fwd = policy.forward_batch(level, &mb.states, &mb.controls, mb.n)?;
    let a = mb.action_dim;
    let inv_b = 1.0 / mb.n as f64;
    let mut d_mean = vec![0.0; mb.n * a];
    let mut d_var = vec![0.0; mb.n * a];
    let mut loss = 0.0;
    let mut stats = SurrogateStats::default();
    for r in 0..mb.n {
        let cg = CompositeGaussian {
            mean: fwd.mean[r * a..(r + 1) * a].to_vec(),
            var: fwd.var[r * a..(r + 1) * a].to_vec(),
        };
        let lp = log_prob(&cg, &mb.actions[r * a..(r + 1) * a])?;
        let ratio = (lp.value - mb.log_probs[r]).exp();
        let adv = mb.advantages[r];
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let unclipped_active = if adv >= 0.0 { ratio <= 1.0 + clip } else { ratio >= 1.0 - clip };
        loss -= (ratio * adv).min(clipped * adv) * inv_b;
        stats.mean_ratio += ratio * inv_b;
        stats.max_ratio_error = stats.max_ratio_error.max((ratio - 1.0).abs());
        if !unclipped_active {
            stats.clip_fraction += inv_b;
            continue;
        }
        let g = -ratio * adv * inv_b;
        for d in 0..a {
            d_mean[r * a + d] = g * lp.d_mean[d];
            d_var[r * a + d] = g * lp.d_var[d];
        }
    }
    if !loss.is_finite() {
        return Err(TrainError::NonFinite("surrogate loss".into()));
    }
    let grads = policy.backward_batch(&fwd, &d_mean, &d_var, None)?;
    Ok((loss, grads, stats))
}

/// `(1/B) Σ ½ (V(x) − target)²` and its parameter gradient.
pub fn value_loss(net: &DenseNet, inputs: &[f64], targets: &[f64]) -> Result<(f64, NetGrads), TrainError> {
    let n = targets.len();
    let (out, cache) = net.forward(&Tensor::matrix(n, net.input_dim(), inputs.to_vec())?)?;
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = out
        .data()
        .iter()
        .zip(targets)
        .map(|(v, t)| {
            let e = v - t;
            loss += 0.5 * e * e * inv;
            e * inv
        })
        .collect();
    let (g, _) = net.backward(&cache, &Tensor::matrix(n, 1, grad)?)?;
    Ok((loss, g))
}

fn check_congruent(net: &DenseNet, anchor: &DenseNet) -> Result<(), TrainError> {
    let same = net.layers().len() == anchor.layers().len()
        && net
            .layers()
            .iter()
            .zip(anchor.layers())
            .all(|(a, b)| a.weights().len() == b.weights().len() && a.biases().len() == b.biases().len());
    if same {
        Ok(())
    } else {
        Err(TrainError::Config(format!("{} and its anchor have different shapes", net.name())))
    }
}

/// `Σ |θ − α|` over all weights and biases.
pub fn l_reg(net: &DenseNet, anchor: &DenseNet) -> Result<f64, TrainError> {
    check_congruent(net, anchor)?;
    Ok(net.params_flat().iter().zip(anchor.params_flat()).map(|(a, b)| (a - b).abs()).sum())
}

/// Subgradient of [`l_reg`]; 0 where a parameter equals its anchor.
pub fn l_reg_grad(net: &DenseNet, anchor: &DenseNet) -> Result<NetGrads, TrainError> {
    check_congruent(net, anchor)?;
    let sign = |d: f64| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    let mut g = NetGrads::zeros_like(net);
    for ((gl, l), al) in g.layers.iter_mut().zip(net.layers()).zip(anchor.layers()) {
        for (i, (x, y)) in l.weights().iter().zip(al.weights()).enumerate() {
            gl.w[i] = sign(x - y);
        }
        for (i, (x, y)) in l.biases().iter().zip(al.biases()).enumerate() {
            gl.b[i] = sign(x - y);
        }
    }
    Ok(g)
}

fn clip_norm(g: &mut NetGrads, max: Option<f64>) {
    if let Some(max) = max {
        let norm = g.flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > max {
            g.scale(max / norm);
        }
    }
}

/// Adam states for whatever a stage trains.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub level: Level,
    pub gating: AdamState,
    /// Absent when the primitive is frozen.
    pub primitive: Option<AdamState>,
    pub value: AdamState,
}

impl Optimizers {
    /// Imitation trains the low-level gating and the primitive; fine-tuning
    /// trains only the high-level gating.
    pub fn new(policy: &McpPolicy, value: &DenseNet, level: Level, cfg: &PpoConfig) -> Self {
        Self {
            level,
            gating: AdamState::new(&policy.gating(level).net, cfg.policy_lr),
            primitive: (level == Level::Low).then(|| AdamState::new(&policy.primitive.net, cfg.policy_lr)),
            value: AdamState::new(value, cfg.value_lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub l_reg: f64,
    pub clip_fraction: f64,
    /// `max |ρ − 1|` over the first minibatch of the first epoch.
    pub first_ratio_error: f64,
    pub minibatches: usize,
}

/// PPO epochs over `batch`. With `anchor` set, the L1 term
/// `reg_weight · l_reg(gating_high, anchor)` is added to the loss.
///
/// On a non-finite loss or gradient every network and optimiser is restored
/// to its state at entry and an error is returned.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut McpPolicy,
    value: &mut DenseNet,
    opt: &mut Optimizers,
    batch: &Batch,
    cfg: &PpoConfig,
    anchor: Option<&DenseNet>,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    if batch.n == 0 {
        return Err(TrainError::Config("empty batch".into()));
    }
    let saved = (policy.clone(), value.clone(), opt.clone());
    let frozen = (opt.level == Level::High).then(|| policy.primitive.net.params_flat());
    let result = update_inner(policy, value, opt, batch, cfg, anchor, rng).map_err(|e| match e {
        TrainError::Nn(crate::nn::NnError::NonFiniteGradient { layer }) => TrainError::NonFinite(format!("gradient in {layer}")),
        TrainError::Policy(crate::policy::PolicyError::Nn(crate::nn::NnError::NonFiniteGradient { layer })) => {
            TrainError::NonFinite(format!("gradient in {layer}"))
        }
        e => e,
    });
    if result.is_err() {
        (*policy, *value, *opt) = saved;
        return result;
    }
    if let Some(before) = frozen {
        let after = policy.primitive.net.params_flat();
        if before.iter().zip(&after).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(TrainError::FrozenBreach("primitive parameters changed during fine-tuning".into()));
        }
    }
    result
}

fn update_inner<R: Rng + ?Sized>(
    policy: &mut McpPolicy,
    value: &mut DenseNet,
    opt: &mut Optimizers,
    batch: &Batch,
    cfg: &PpoConfig,
    anchor: Option<&DenseNet>,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    let level = opt.level;
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..batch.n).collect();
    let mut pl_sum = 0.0;
    let mut vl_sum = 0.0;
    let mut clip_sum = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for (m, idx) in order.chunks(cfg.minibatch).enumerate() {
            let mb = batch.subset(idx);
            let (mut loss, mut g, s) = surrogate_loss(policy, level, &mb, cfg.clip)?;
            if epoch == 0 && m == 0 {
                stats.first_ratio_error = s.max_ratio_error;
            }
            if let Some(anchor) = anchor {
                let net = &policy.gating(level).net;
                loss += cfg.reg_weight * l_reg(net, anchor)?;
                let mut rg = l_reg_grad(net, anchor)?;
                rg.scale(cfg.reg_weight);
                g.gating.add_assign(&rg);
            }
            let (vl, mut vg) = value_loss(value, &mb.value_inputs(), &mb.targets)?;
            if !loss.is_finite() || !vl.is_finite() {
                return Err(TrainError::NonFinite(format!("loss at epoch {epoch}, minibatch {m}")));
            }
            clip_norm(&mut g.gating, cfg.max_grad_norm);
            clip_norm(&mut g.primitive, cfg.max_grad_norm);
            clip_norm(&mut vg, cfg.max_grad_norm);
            opt.gating.step(&mut policy.gating_mut(level).net, &g.gating)?;
            if let Some(p) = opt.primitive.as_mut() {
                p.step(&mut policy.primitive.net, &g.primitive)?;
            }
            opt.value.step(value, &vg)?;
            pl_sum += loss;
            vl_sum += vl;
            clip_sum += s.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let n = stats.minibatches.max(1) as f64;
    stats.policy_loss = pl_sum / n;
    stats.value_loss = vl_sum / n;
    stats.clip_fraction = clip_sum / n;
    if let Some(anchor) = anchor {
        stats.l_reg = l_reg(&policy.gating(level).net, anchor)?;
    }
    Ok(stats)
}
