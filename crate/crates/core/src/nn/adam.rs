use super::{DenseNet, NetGrads, NnError};

/// Adam optimiser state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self::with_betas(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(net: &DenseNet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weights().len(), l.biases().len()])
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update. Nothing is modified when any
    /// gradient entry is non-finite.
    pub fn step(&mut self, net: &mut DenseNet, grads: &NetGrads) -> Result<(), NnError> {
        if !grads.is_congruent(net) || self.m.len() != 2 * net.layers().len() {
            return Err(NnError::GradShape {
                net: net.name().to_string(),
            });
        }
        for (li, g) in grads.layers.iter().enumerate() {
            if g.w.iter().chain(&g.b).any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    layer: net.layer_name(li),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[li];
            for (slot, (params, grad)) in [(&mut layer.w, &g.w), (&mut layer.b, &g.b)]
                .into_iter()
                .enumerate()
            {
                let m = &mut self.m[2 * li + slot];
                let v = &mut self.v[2 * li + slot];
                for i in 0..params.len() {
                    let gi = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    params[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    fn scalar_net(p: f64) -> DenseNet {
        DenseNet::from_layers(
            "s",
            vec![DenseLayer::new(1, 1, Activation::Linear, vec![p], vec![0.0]).unwrap()],
        )
        .unwrap()
    }

    fn grads(gw: f64, gb: f64) -> NetGrads {
        NetGrads {
            layers: vec![crate::nn::LayerGrads {
                w: vec![gw],
                b: vec![gb],
            }],
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut net = scalar_net(1.5);
        let mut adam = AdamState::new(&net, 0.1);
        adam.step(&mut net, &grads(0.0, 0.0)).unwrap();
        assert_eq!(net.params_flat(), vec![1.5, 0.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net, 0.1);
        adam.step(&mut net, &grads(1.0, 0.0)).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((net.params_flat()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut net = DenseNet::from_layers(
            "s",
            vec![DenseLayer::new(2, 1, Activation::Linear, vec![0.3, 0.3], vec![0.0]).unwrap()],
        )
        .unwrap();
        let mut adam = AdamState::new(&net, 0.01);
        for k in 0..5 {
            let g = NetGrads {
                layers: vec![crate::nn::LayerGrads {
                    w: vec![0.2 * k as f64, 0.2 * k as f64],
                    b: vec![0.0],
                }],
            };
            adam.step(&mut net, &g).unwrap();
        }
        let p = net.params_flat();
        assert_eq!(p[0].to_bits(), p[1].to_bits());
    }

    #[test]
    fn non_finite_gradient_rejected_with_layer_name() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, 0.1);
        let err = adam.step(&mut net, &grads(f64::NAN, 0.0)).unwrap_err();
        assert_eq!(
            err,
            NnError::NonFiniteGradient {
                layer: "s/layer0".into()
            }
        );
        assert_eq!(net.params_flat(), vec![1.0, 0.0]);
        assert_eq!(adam.step_count(), 0);
    }
}
