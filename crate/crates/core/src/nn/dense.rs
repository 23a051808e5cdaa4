use super::{Activation, NnError, Tensor};
use rand::Rng;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Affine map followed by an element-wise activation.
///
/// `w` is row-major with shape `[out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) activation: Activation,
    pub(crate) w: Vec<f64>,
    pub(crate) b: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        w: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self, NnError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::Invalid("layer dimensions must be positive".into()));
        }
        if w.len() != in_dim * out_dim || b.len() != out_dim {
            return Err(NnError::Invalid(format!(
                "layer {out_dim}x{in_dim} given {} weights and {} biases",
                w.len(),
                b.len()
            )));
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(NnError::Invalid("non-finite parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            w,
            b,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn biases(&self) -> &[f64] {
        &self.b
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// A feed-forward stack of [`DenseLayer`]s.
///
/// Each instance carries an identity and a version counter so that a
/// [`ForwardCache`] produced before a parameter update is rejected by
/// [`DenseNet::backward`].
#[derive(Debug)]
pub struct DenseNet {
    name: String,
    layers: Vec<DenseLayer>,
    id: u64,
    version: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.layers == other.layers
    }
}

/// Activation record needed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    batch: usize,
    rank1: bool,
    /// Input of every layer, `batch x in_dim`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer, `batch x out_dim`.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradients congruent with the parameters of one [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += y);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|x| *x *= s);
        }
    }

    /// Parameters in the same order as [`DenseNet::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_congruent(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.w.len() == l.w.len() && g.b.len() == l.b.len())
    }
}

impl DenseNet {
    /// Builds a Glorot-initialised network. `shape` lists `(width, activation)`
    /// per layer; the last entry defines the output.
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        input_dim: usize,
        shape: &[(usize, Activation)],
        rng: &mut R,
    ) -> Self {
        assert!(input_dim > 0 && !shape.is_empty() && shape.iter().all(|s| s.0 > 0));
        let mut layers = Vec::with_capacity(shape.len());
        let mut prev = input_dim;
        for &(width, act) in shape {
            layers.push(DenseLayer::glorot(prev, width, act, rng));
            prev = width;
        }
        Self {
            name: name.into(),
            layers,
            id: fresh_id(),
            version: 0,
        }
    }

    pub fn from_layers(name: impl Into<String>, layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Invalid("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::Invalid(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Human-readable layer name used in diagnostics, e.g. `primitive/layer1`.
    pub fn layer_name(&self, i: usize) -> String {
        format!("{}/layer{}", self.name, i)
    }

    /// All parameters, per layer weights then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if index < l.w.len() {
                return (li, true, index);
            }
            index -= l.w.len();
            if index < l.b.len() {
                return (li, false, index);
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> f64 {
        let (li, is_w, i) = self.locate(index);
        let l = &self.layers[li];
        if is_w {
            l.w[i]
        } else {
            l.b[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (li, is_w, i) = self.locate(index);
        let l = &mut self.layers[li];
        if is_w {
            l.w[i] = value;
        } else {
            l.b[i] = value;
        }
        self.version += 1;
    }

    /// Mutable access to every layer; bumps the version so outstanding
    /// caches become stale.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version += 1;
        &mut self.layers
    }

    fn check_input(&self, input: &Tensor) -> Result<(), NnError> {
        if input.shape().len() > 2 || input.cols() != self.input_dim() {
            return Err(NnError::InputDim {
                expected: self.input_dim(),
                found: input.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass returning the output and the record needed for backward.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
        self.check_input(input)?;
        let batch = input.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            let z = affine(layer, &x, batch);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        let out = self.shape_output(input, x)?;
        Ok((
            out,
            ForwardCache {
                net_id: self.id,
                version: self.version,
                batch,
                rank1: input.shape().len() == 1,
                inputs,
                pre,
            },
        ))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(input)?;
        let batch = input.rows();
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            let mut z = affine(layer, &x, batch);
            z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            x = z;
        }
        self.shape_output(input, x)
    }

    /// Single-sample convenience wrapper around [`DenseNet::predict`].
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.predict(&Tensor::vector(x.to_vec())?)?.into_data())
    }

    fn shape_output(&self, input: &Tensor, data: Vec<f64>) -> Result<Tensor, NnError> {
        if input.shape().len() == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(input.rows(), self.output_dim(), data)
        }
    }

    /// Back-propagates `output_grad` (dL/d output) through the layers.
    ///
    /// Returns parameter gradients summed over the batch and dL/d input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &Tensor,
    ) -> Result<(NetGrads, Tensor), NnError> {
        if cache.net_id != self.id {
            return Err(NnError::StaleCache {
                reason: "produced by another network",
            });
        }
        if cache.version != self.version {
            return Err(NnError::StaleCache {
                reason: "parameters changed since forward",
            });
        }
        if output_grad.cols() != self.output_dim() || output_grad.rows() != cache.batch {
            return Err(NnError::OutputGradDim {
                expected: self.output_dim(),
                found: output_grad.cols(),
            });
        }
        let batch = cache.batch;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.data().to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[li];
            if layer.activation != Activation::Linear {
                delta
                    .iter_mut()
                    .zip(z)
                    .for_each(|(d, &zv)| *d *= layer.activation.derivative(zv));
            }
            let x = &cache.inputs[li];
            let mut gw = vec![0.0; layer.w.len()];
            gemm_dt_x(&delta, x, &mut gw, batch, layer.out_dim, layer.in_dim);
            let mut gb = vec![0.0; layer.out_dim];
            for r in 0..batch {
                gb.iter_mut()
                    .zip(&delta[r * layer.out_dim..(r + 1) * layer.out_dim])
                    .for_each(|(g, d)| *g += d);
            }
            let mut dx = vec![0.0; batch * layer.in_dim];
            gemm_d_w(&delta, &layer.w, &mut dx, batch, layer.out_dim, layer.in_dim);
            grads.push(LayerGrads { w: gw, b: gb });
            delta = dx;
        }
        grads.reverse();
        let input_grad = if cache.rank1 {
            Tensor::vector(delta)?
        } else {
            Tensor::matrix(batch, self.input_dim(), delta)?
        };
        Ok((NetGrads { layers: grads }, input_grad))
    }
}

/// `Z = X W^T + b` for a `batch x in` input.
fn affine(layer: &DenseLayer, x: &[f64], batch: usize) -> Vec<f64> {
    let (k, n) = (layer.in_dim, layer.out_dim);
    let mut z = Vec::with_capacity(batch * n);
    for _ in 0..batch {
        z.extend_from_slice(&layer.b);
    }
    // SAFETY: slice lengths match the strides given to dgemm.
    unsafe {
        matrixmultiply::dgemm(
            batch,
            k,
            n,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            layer.w.as_ptr(),
            1,
            k as isize,
            1.0,
            z.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    z
}

/// `dW += D^T X` with `D: batch x out`, `X: batch x in`, `dW: out x in`.
fn gemm_dt_x(d: &[f64], x: &[f64], gw: &mut [f64], batch: usize, out: usize, inp: usize) {
    debug_assert_eq!(d.len(), batch * out);
    debug_assert_eq!(x.len(), batch * inp);
    debug_assert_eq!(gw.len(), out * inp);
    // SAFETY: see above.
    unsafe {
        matrixmultiply::dgemm(
            out,
            batch,
            inp,
            1.0,
            d.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inp as isize,
            1,
            0.0,
            gw.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// `dX = D W` with `D: batch x out`, `W: out x in`.
fn gemm_d_w(d: &[f64], w: &[f64], dx: &mut [f64], batch: usize, out: usize, inp: usize) {
    // SAFETY: see above.
    unsafe {
        matrixmultiply::dgemm(
            batch,
            out,
            inp,
            1.0,
            d.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            0.0,
            dx.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}
