use super::PolicyError;
use crate::nn::{Activation, DenseNet, ForwardCache, NetGrads, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const WEIGHT_SUM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingKind {
    LowLevel,
    HighLevel,
}

impl GatingKind {
    pub fn net_name(self) -> &'static str {
        match self {
            GatingKind::LowLevel => "gating_low",
            GatingKind::HighLevel => "gating_high",
        }
    }
}

/// Maps `(state, control)` features to `k` nonnegative primitive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNet {
    pub net: DenseNet,
    pub kind: GatingKind,
    state_dim: usize,
    control_dim: usize,
}

impl GatingNet {
    pub fn new<R: Rng + ?Sized>(
        kind: GatingKind,
        state_dim: usize,
        control_dim: usize,
        hidden: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut shape: Vec<(usize, Activation)> = hidden.iter().map(|&h| (h, Activation::Relu)).collect();
        shape.push((k, Activation::Softplus));
        let net = DenseNet::new(kind.net_name(), state_dim + control_dim, &shape, rng);
        Self { net, kind, state_dim, control_dim }
    }

    pub fn from_net(kind: GatingKind, net: DenseNet, state_dim: usize) -> Result<Self, PolicyError> {
        let last = net.layers().last().expect("nets have layers");
        if last.activation() != Activation::Softplus || net.input_dim() <= state_dim {
            return Err(PolicyError::Network(format!(
                "{} must take more than {state_dim} inputs and end in softplus",
                kind.net_name()
            )));
        }
        let control_dim = net.input_dim() - state_dim;
        let mut net = net;
        net.set_name(kind.net_name());
        Ok(Self { net, kind, state_dim, control_dim })
    }

    pub fn k(&self) -> usize {
        self.net.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Zeroes the output layer so every weight starts at `ln 2`.
    pub fn zero_output_layer(&mut self) {
        let last = self.net.layers_mut().last_mut().expect("nets have layers");
        last.w.iter_mut().for_each(|v| *v = 0.0);
        last.b.iter_mut().for_each(|v| *v = 0.0);
    }

    fn input(&self, s: &[f64], c: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if s.len() != self.state_dim {
            return Err(PolicyError::Dim { what: "state features", expected: self.state_dim, found: s.len() });
        }
        if c.len() != self.control_dim {
            return Err(PolicyError::Dim { what: "control features", expected: self.control_dim, found: c.len() });
        }
        let mut x = Vec::with_capacity(s.len() + c.len());
        x.extend_from_slice(s);
        x.extend_from_slice(c);
        Ok(x)
    }

    pub fn gate(&self, s: &[f64], c: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut w = self.net.predict_one(&self.input(s, c)?)?;
        floor_weights(&mut w);
        Ok(w)
    }

    /// Batched forward on `[s | c]` rows; returns floored weights plus the cache.
    pub fn forward_batch(&self, input: &Tensor) -> Result<(Vec<f64>, ForwardCache), PolicyError> {
        let (out, cache) = self.net.forward(input)?;
        let mut w = out.into_data();
        for row in w.chunks_mut(self.k()) {
            floor_weights(row);
        }
        Ok((w, cache))
    }

    /// Back-propagates `d_w`; entries held at the floor receive no gradient.
    pub fn backward_batch(&self, cache: &ForwardCache, w: &[f64], d_w: &[f64]) -> Result<NetGrads, PolicyError> {
        let floor = WEIGHT_SUM_FLOOR / self.k() as f64;
        let g: Vec<f64> = w.iter().zip(d_w).map(|(&wv, &d)| if wv <= floor { 0.0 } else { d }).collect();
        let (grads, _) = self.net.backward(cache, &Tensor::matrix(cache.batch(), self.k(), g)?)?;
        Ok(grads)
    }
}

/// Per-element floor at `ε/k`, which guarantees `Σ w ≥ ε`.
pub fn floor_weights(w: &mut [f64]) {
    let floor = WEIGHT_SUM_FLOOR / w.len() as f64;
    for v in w {
        if !(*v > floor) {
            *v = floor;
        }
    }
}
