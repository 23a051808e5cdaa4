//! Central finite differences, the oracle for every hand-written gradient.

use super::{DenseNet, LayerGrads, NetGrads};

/// Central-difference gradient of `f` at `x`, restored in place afterwards.
pub fn central_difference<F>(x: &mut [f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference estimate of dL/dθ for every parameter of `net`.
pub fn finite_diff_grad<F>(mut loss_fn: F, net: &DenseNet, h: f64) -> NetGrads
where
    F: FnMut(&DenseNet) -> f64,
{
    let mut probe = net.clone();
    let flat: Vec<f64> = (0..net.param_count())
        .map(|i| {
            let orig = probe.param(i);
            probe.set_param(i, orig + h);
            let up = loss_fn(&probe);
            probe.set_param(i, orig - h);
            let down = loss_fn(&probe);
            probe.set_param(i, orig);
            (up - down) / (2.0 * h)
        })
        .collect();
    let mut it = flat.into_iter();
    NetGrads {
        layers: net
            .layers()
            .iter()
            .map(|l| LayerGrads {
                w: it.by_ref().take(l.weights().len()).collect(),
                b: it.by_ref().take(l.biases().len()).collect(),
            })
            .collect(),
    }
}

/// Central differences for a chosen subset of flat parameter indices.
pub fn finite_diff_subset<F>(mut loss_fn: F, net: &DenseNet, indices: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&DenseNet) -> f64,
{
    let mut probe = net.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.param(i);
            probe.set_param(i, orig + h);
            let up = loss_fn(&probe);
            probe.set_param(i, orig - h);
            let down = loss_fn(&probe);
            probe.set_param(i, orig);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub compared: usize,
    /// Largest relative error over entries with |analytic| >= `abs_floor`.
    pub max_rel_error: f64,
    /// Largest absolute error over entries below the floor.
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error < abs_tol
    }
}

/// Compares analytic and numeric gradients. Entries whose analytic magnitude
/// is below `abs_floor` are compared absolutely.
pub fn compare_grads(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut report = GradCheckReport {
        compared: analytic.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        if a.abs() < abs_floor {
            report.max_abs_error = report.max_abs_error.max(diff);
        } else {
            report.max_rel_error = report.max_rel_error.max(diff / a.abs().max(n.abs()));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_gradient() {
        let mut x = vec![3.0];
        let g = central_difference(&mut x, 1e-5, |p| 0.5 * p[0] * p[0]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert_eq!(x, vec![3.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new("c", 3, &[(4, Activation::Tanh)], &mut rng);
        let g = finite_diff_grad(|_| 2.5, &net, 1e-5);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn scalar_param_quadratic_through_net() {
        let net = DenseNet::from_layers(
            "q",
            vec![DenseLayer::new(1, 1, Activation::Linear, vec![3.0], vec![0.0]).unwrap()],
        )
        .unwrap();
        let g = finite_diff_grad(|n| 0.5 * n.param(0).powi(2), &net, 1e-5);
        assert!((g.layers[0].w[0] - 3.0).abs() < 1e-8);
    }

    fn random_three_layer(seed: u64) -> (DenseNet, Tensor, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(
            "r",
            4,
            &[
                (6, Activation::Tanh),
                (5, Activation::Softplus),
                (3, Activation::Sigmoid),
            ],
            &mut rng,
        );
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
        let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        (net, Tensor::matrix(2, 4, x).unwrap(), target)
    }

    fn weighted_sum_loss(net: &DenseNet, x: &Tensor, target: &[f64]) -> f64 {
        let y = net.predict(x).unwrap();
        y.data().iter().zip(target).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences_on_random_nets() {
        for seed in 0..5 {
            let (net, x, target) = random_three_layer(seed);
            let (_, cache) = net.forward(&x).unwrap();
            let upstream = Tensor::matrix(2, 3, target.clone()).unwrap();
            let (grads, _) = net.backward(&cache, &upstream).unwrap();
            let numeric = finite_diff_grad(|n| weighted_sum_loss(n, &x, &target), &net, 1e-5);
            let report = compare_grads(&grads.flat(), &numeric.flat(), 1e-8);
            assert!(report.passes(1e-4, 1e-8), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (net, x, target) = random_three_layer(42);
        let (_, cache) = net.forward(&x).unwrap();
        let upstream = Tensor::matrix(2, 3, target.clone()).unwrap();
        let (_, dx) = net.backward(&cache, &upstream).unwrap();
        let mut raw = x.data().to_vec();
        let numeric = central_difference(&mut raw, 1e-5, |p| {
            weighted_sum_loss(&net, &Tensor::matrix(2, 4, p.to_vec()).unwrap(), &target)
        });
        let report = compare_grads(dx.data(), &numeric, 1e-8);
        assert!(report.passes(1e-4, 1e-8), "{report:?}");
    }
}
