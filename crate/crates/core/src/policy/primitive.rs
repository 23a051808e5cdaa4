use super::PolicyError;
use crate::nn::{Activation, DenseNet, ForwardCache, NetGrads, Tensor};
use rand::Rng;

pub const NET_NAME: &str = "primitive";

/// State features to `k` action means, one row of `|A|` per primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveNet {
    pub net: DenseNet,
    k: usize,
    action_dim: usize,
}

impl PrimitiveNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], k: usize, action_dim: usize, rng: &mut R) -> Self {
        let mut shape: Vec<(usize, Activation)> = hidden.iter().map(|&h| (h, Activation::Relu)).collect();
        shape.push((k * action_dim, Activation::Linear));
        Self {
            net: DenseNet::new(NET_NAME, state_dim, &shape, rng),
            k,
            action_dim,
        }
    }

    pub fn from_net(net: DenseNet, k: usize) -> Result<Self, PolicyError> {
        if k == 0 || net.output_dim() % k != 0 {
            return Err(PolicyError::Network(format!(
                "primitive output {} is not a multiple of k = {k}",
                net.output_dim()
            )));
        }
        let action_dim = net.output_dim() / k;
        let mut net = net;
        net.set_name(NET_NAME);
        Ok(Self { net, k, action_dim })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Sets every primitive's output bias to `bias` (length `|A|`).
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<(), PolicyError> {
        if bias.len() != self.action_dim {
            return Err(PolicyError::Dim { what: "bias", expected: self.action_dim, found: bias.len() });
        }
        let last = self.net.layers_mut().last_mut().expect("nets have layers");
        for row in last.b.chunks_mut(bias.len()) {
            row.copy_from_slice(bias);
        }
        Ok(())
    }

    pub fn means(&self, s: &[f64]) -> Result<Vec<Vec<f64>>, PolicyError> {
        if s.len() != self.state_dim() {
            return Err(PolicyError::Dim { what: "state features", expected: self.state_dim(), found: s.len() });
        }
        let out = self.net.predict_one(s)?;
        Ok(out.chunks(self.action_dim).map(<[f64]>::to_vec).collect())
    }

    pub fn forward_batch(&self, states: &Tensor) -> Result<(Vec<f64>, ForwardCache), PolicyError> {
        let (out, cache) = self.net.forward(states)?;
        Ok((out.into_data(), cache))
    }

    pub fn backward_batch(&self, cache: &ForwardCache, d_mu: Vec<f64>) -> Result<NetGrads, PolicyError> {
        let (g, _) = self.net.backward(cache, &Tensor::matrix(cache.batch(), self.net.output_dim(), d_mu)?)?;
        Ok(g)
    }
}
