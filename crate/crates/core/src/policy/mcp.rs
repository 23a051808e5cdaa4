use super::gaussian::{compose, sample, CompositeGaussian};
use super::gating::{GatingKind, GatingNet};
use super::primitive::PrimitiveNet;
use super::PolicyError;
use crate::nn::{Checkpoint, CheckpointMeta, ForwardCache, NetGrads, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub k: usize,
    pub gating_hidden: Vec<usize>,
    pub primitive_hidden: Vec<usize>,
    /// Fixed per-dimension action variance.
    pub sigma2: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            k: 8,
            gating_hidden: vec![128, 128],
            primitive_hidden: vec![256, 256],
            sigma2: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    High,
}

impl Level {
    pub fn gating_kind(self) -> GatingKind {
        match self {
            Level::Low => GatingKind::LowLevel,
            Level::High => GatingKind::HighLevel,
        }
    }
}

/// Primitive network shared by two gating networks.
#[derive(Debug, Clone, PartialEq)]
pub struct McpPolicy {
    pub gating_low: GatingNet,
    pub gating_high: GatingNet,
    pub primitive: PrimitiveNet,
    pub sigma2: Vec<f64>,
}

/// Everything the backward pass needs from one batched forward.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub level: Level,
    pub batch: usize,
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    gating_cache: ForwardCache,
    primitive_cache: ForwardCache,
}

impl BatchForward {
    pub fn composite(&self, row: usize) -> CompositeGaussian {
        let a = self.mean.len() / self.batch;
        CompositeGaussian {
            mean: self.mean[row * a..(row + 1) * a].to_vec(),
            var: self.var[row * a..(row + 1) * a].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub gating: NetGrads,
    pub primitive: NetGrads,
}

impl McpPolicy {
    pub fn new<R: Rng + ?Sized>(
        cfg: &PolicyConfig,
        state_dim: usize,
        c_low_dim: usize,
        c_high_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        let gl = GatingNet::new(GatingKind::LowLevel, state_dim, c_low_dim, &cfg.gating_hidden, cfg.k, rng);
        let gh = GatingNet::new(GatingKind::HighLevel, state_dim, c_high_dim, &cfg.gating_hidden, cfg.k, rng);
        let primitive = PrimitiveNet::new(state_dim, &cfg.primitive_hidden, cfg.k, action_dim, rng);
        Self {
            gating_low: gl,
            gating_high: gh,
            primitive,
            sigma2: vec![cfg.sigma2; action_dim],
        }
    }

    pub fn k(&self) -> usize {
        self.primitive.k()
    }

    pub fn action_dim(&self) -> usize {
        self.primitive.action_dim()
    }

    pub fn gating(&self, level: Level) -> &GatingNet {
        match level {
            Level::Low => &self.gating_low,
            Level::High => &self.gating_high,
        }
    }

    pub fn gating_mut(&mut self, level: Level) -> &mut GatingNet {
        match level {
            Level::Low => &mut self.gating_low,
            Level::High => &mut self.gating_high,
        }
    }

    pub fn distribution(&self, level: Level, s: &[f64], c: &[f64]) -> Result<(Vec<f64>, CompositeGaussian), PolicyError> {
        let w = self.gating(level).gate(s, c)?;
        let mu = self.primitive.means(s)?;
        let cg = compose(&w, &mu, &self.sigma2)?;
        Ok((w, cg))
    }

    /// Samples an action, or returns the composite mean when `deterministic`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        level: Level,
        s: &[f64],
        c: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, CompositeGaussian), PolicyError> {
        let (_, cg) = self.distribution(level, s, c)?;
        let a = if deterministic { cg.mean.clone() } else { sample(&cg, rng) };
        Ok((a, cg))
    }

    /// Batched forward on row-major `states` (`batch × S`) and `controls` (`batch × C`).
    pub fn forward_batch(&self, level: Level, states: &[f64], controls: &[f64], batch: usize) -> Result<BatchForward, PolicyError> {
        let g = self.gating(level);
        let (sd, cd) = (g.state_dim(), g.control_dim());
        if states.len() != batch * sd || controls.len() != batch * cd {
            return Err(PolicyError::Dim { what: "batch", expected: batch * (sd + cd), found: states.len() + controls.len() });
        }
        let mut x = Vec::with_capacity(batch * (sd + cd));
        for r in 0..batch {
            x.extend_from_slice(&states[r * sd..(r + 1) * sd]);
            x.extend_from_slice(&controls[r * cd..(r + 1) * cd]);
        }
        let (w, gating_cache) = g.forward_batch(&Tensor::matrix(batch, sd + cd, x)?)?;
        let (mu, primitive_cache) = self.primitive.forward_batch(&Tensor::matrix(batch, sd, states.to_vec())?)?;
        let (k, a) = (self.k(), self.action_dim());
        let mut mean = vec![0.0; batch * a];
        let mut var = vec![0.0; batch * a];
        for r in 0..batch {
            let wr = &w[r * k..(r + 1) * k];
            let sum: f64 = wr.iter().sum();
            for d in 0..a {
                let m: f64 = (0..k).map(|i| wr[i] * mu[(r * k + i) * a + d]).sum();
                mean[r * a + d] = m / sum;
                var[r * a + d] = self.sigma2[d] / sum;
            }
        }
        Ok(BatchForward { level, batch, w, mu, mean, var, gating_cache, primitive_cache })
    }

    /// Chains `dL/dmean`, `dL/dvar` (and an optional direct `dL/dw`) back to
    /// the gating and primitive parameters. Gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        fwd: &BatchForward,
        d_mean: &[f64],
        d_var: &[f64],
        d_w_extra: Option<&[f64]>,
    ) -> Result<PolicyGrads, PolicyError> {
        let (k, a, b) = (self.k(), self.action_dim(), fwd.batch);
        if d_mean.len() != b * a || d_var.len() != b * a {
            return Err(PolicyError::Dim { what: "output gradient", expected: b * a, found: d_mean.len() });
        }
        let mut d_w = d_w_extra.map_or_else(|| vec![0.0; b * k], <[f64]>::to_vec);
        let mut d_mu = vec![0.0; b * k * a];
        for r in 0..b {
            let wr = &fwd.w[r * k..(r + 1) * k];
            let sum: f64 = wr.iter().sum();
            for d in 0..a {
                let (dm, dv) = (d_mean[r * a + d], d_var[r * a + d]);
                let (m, v) = (fwd.mean[r * a + d], fwd.var[r * a + d]);
                for i in 0..k {
                    let mu = fwd.mu[(r * k + i) * a + d];
                    d_mu[(r * k + i) * a + d] = dm * wr[i] / sum;
                    d_w[r * k + i] += (dm * (mu - m) - dv * v) / sum;
                }
            }
        }
        let gating = self.gating(fwd.level).backward_batch(&fwd.gating_cache, &fwd.w, &d_w)?;
        let primitive = self.primitive.backward_batch(&fwd.primitive_cache, d_mu)?;
        Ok(PolicyGrads { gating, primitive })
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        let mut ck = Checkpoint::new(meta);
        ck.insert(GatingKind::LowLevel.net_name(), &self.gating_low.net);
        ck.insert(GatingKind::HighLevel.net_name(), &self.gating_high.net);
        ck.insert(super::primitive::NET_NAME, &self.primitive.net);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, sigma2: f64) -> Result<Self, PolicyError> {
        let primitive = PrimitiveNet::from_net(ck.net(super::primitive::NET_NAME)?, ck.meta.k)?;
        let sd = primitive.state_dim();
        let gating_low = GatingNet::from_net(GatingKind::LowLevel, ck.net(GatingKind::LowLevel.net_name())?, sd)?;
        let gating_high = GatingNet::from_net(GatingKind::HighLevel, ck.net(GatingKind::HighLevel.net_name())?, sd)?;
        if gating_low.k() != primitive.k() || gating_high.k() != primitive.k() {
            return Err(PolicyError::Network("gating and primitive disagree on k".into()));
        }
        let a = primitive.action_dim();
        Ok(Self { gating_low, gating_high, primitive, sigma2: vec![sigma2; a] })
    }
}
