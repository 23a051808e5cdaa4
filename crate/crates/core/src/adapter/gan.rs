use super::dataset::{AdapterDataset, AdapterRecord, Split};
use super::AdapterError;
use crate::eval::{occupancy_overlap, pca_project};
use crate::nn::{Activation, AdamState, DenseNet, NetGrads, NnError, Tensor};
use crate::policy::{GatingKind, GatingNet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[LOG_CLAMP, 1 − LOG_CLAMP]` inside logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub disc_hidden: Vec<usize>,
    /// Grid cell for the occupancy overlap in the top-2 PCA plane.
    pub pca_cell: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lambda_rec: 100.0,
            lambda_adv: 1.0,
            lr: 2e-5,
            epochs: 50,
            batch: 256,
            disc_hidden: vec![64, 64],
            pca_cell: 0.05,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), AdapterError> {
        let bad = |m: &str| Err(AdapterError::Config(m.into()));
        if !(self.lambda_rec >= 0.0 && self.lambda_adv >= 0.0) || !self.lambda_rec.is_finite() || !self.lambda_adv.is_finite() {
            return bad("loss weights must be finite and nonnegative");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if self.batch == 0 || self.disc_hidden.iter().any(|&h| h == 0) {
            return bad("batch and layer widths must be positive");
        }
        if !(self.pca_cell > 0.0) {
            return bad("pca_cell must be positive");
        }
        Ok(())
    }
}

/// Probability that a weight vector came from the low-level gating.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: DenseNet,
}

impl Discriminator {
    /// `k → hidden… → 1`, leaky ReLU between layers, sigmoid output.
    pub fn new<R: Rng + ?Sized>(k: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut shape: Vec<(usize, Activation)> = hidden.iter().map(|&h| (h, Activation::LeakyRelu)).collect();
        shape.push((1, Activation::Sigmoid));
        Self { net: DenseNet::new("discriminator", k, &shape, rng) }
    }

    pub fn from_net(net: DenseNet) -> Result<Self, AdapterError> {
        let last = net.layers().last().expect("nets have layers");
        if net.output_dim() != 1 || last.activation() != Activation::Sigmoid {
            return Err(AdapterError::Config("discriminator must end in one sigmoid unit".into()));
        }
        Ok(Self { net })
    }

    pub fn k(&self) -> usize {
        self.net.input_dim()
    }

    /// `D(w)` for each row of the flat batch `w`.
    pub fn predict(&self, w: &[f64]) -> Result<Vec<f64>, AdapterError> {
        let k = self.k();
        Ok(self.net.predict(&Tensor::matrix(w.len() / k, k, w.to_vec())?)?.into_data())
    }
}

/// Loss value, its parts and the gradient for the network being trained.
#[derive(Debug, Clone)]
pub struct GanLoss {
    pub total: f64,
    pub adversarial: f64,
    pub reconstruction: f64,
    pub grads: NetGrads,
}

fn clamped(p: f64) -> (f64, bool) {
    if p < LOG_CLAMP {
        (LOG_CLAMP, false)
    } else if p > 1.0 - LOG_CLAMP {
        (1.0 - LOG_CLAMP, false)
    } else {
        (p, true)
    }
}

fn rows(len: usize, k: usize, what: &str) -> Result<usize, AdapterError> {
    if len == 0 || len % k != 0 {
        return Err(AdapterError::Config(format!("{what} batch of {len} values is not a nonempty multiple of k={k}")));
    }
    Ok(len / k)
}

/// Discriminator objective `−(E log D(w_real) + E log(1 − D(w_fake)))`.
/// Gradients are for the discriminator only.
pub fn d_loss(d: &Discriminator, w_real: &[f64], w_fake: &[f64]) -> Result<GanLoss, AdapterError> {
    let k = d.k();
    let nr = rows(w_real.len(), k, "real")?;
    let nf = rows(w_fake.len(), k, "fake")?;
    let mut x = w_real.to_vec();
    x.extend_from_slice(w_fake);
    let (p, cache) = d.net.forward(&Tensor::matrix(nr + nf, k, x)?)?;
    let p = p.into_data();
    let mut loss = 0.0;
    let mut dp = vec![0.0; nr + nf];
    for (i, &pi) in p.iter().enumerate() {
        let (q, live) = clamped(pi);
        if i < nr {
            loss -= q.ln() / nr as f64;
            if live {
                dp[i] = -1.0 / (q * nr as f64);
            }
        } else {
            loss -= (1.0 - q).ln() / nf as f64;
            if live {
                dp[i] = 1.0 / ((1.0 - q) * nf as f64);
            }
        }
    }
    let (grads, _) = d.net.backward(&cache, &Tensor::matrix(nr + nf, 1, dp)?)?;
    Ok(GanLoss { total: loss, adversarial: loss, reconstruction: 0.0, grads })
}

/// Generator objective `λ_adv·E[−log D(w_fake)] + λ_rec·E[mean_d |w_fake − w_real|]`
/// with `w_fake = G(inputs)`. Gradients are for the generator only; with
/// `λ_adv = 0` the discriminator is not evaluated.
pub fn g_loss(
    g: &GatingNet,
    d: &Discriminator,
    inputs: &Tensor,
    w_real: &[f64],
    lambda_adv: f64,
    lambda_rec: f64,
) -> Result<GanLoss, AdapterError> {
    let k = g.k();
    let n = inputs.rows();
    if w_real.len() != n * k || n == 0 {
        return Err(AdapterError::Config(format!("expected {} real weights, got {}", n * k, w_real.len())));
    }
    let (w, cache) = g.forward_batch(inputs)?;
    let nk = (n * k) as f64;
    let mut rec = 0.0;
    let mut dw = vec![0.0; n * k];
    for i in 0..n * k {
        let diff = w[i] - w_real[i];
        rec += diff.abs() / nk;
        dw[i] = lambda_rec * diff.signum() * f64::from(diff != 0.0) / nk;
    }
    let mut adv = 0.0;
    if lambda_adv != 0.0 {
        let (p, dcache) = d.net.forward(&Tensor::matrix(n, k, w.clone())?)?;
        let mut dp = vec![0.0; n];
        for (i, &pi) in p.data().iter().enumerate() {
            let (q, live) = clamped(pi);
            adv -= q.ln() / n as f64;
            if live {
                dp[i] = -lambda_adv / (q * n as f64);
            }
        }
        let (_, dx) = d.net.backward(&dcache, &Tensor::matrix(n, 1, dp)?)?;
        dw.iter_mut().zip(dx.data()).for_each(|(a, b)| *a += b);
    }
    let grads = g.backward_batch(&cache, &w, &dw)?;
    Ok(GanLoss { total: lambda_adv * adv + lambda_rec * rec, adversarial: adv, reconstruction: rec, grads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub g_adversarial: f64,
    pub train_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterReport {
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub epochs: usize,
    pub train_records: usize,
    pub heldout_records: usize,
    pub heldout_l1: f64,
    /// Fraction of held-out real and generated vectors classified correctly at 0.5.
    pub d_accuracy: f64,
    pub pca_overlap: f64,
}

#[derive(Debug, Clone)]
pub struct AdapterOutput {
    pub generator: GatingNet,
    pub discriminator: Discriminator,
    pub report: AdapterReport,
    pub history: Vec<EpochRecord>,
}

struct Flat {
    x: Vec<f64>,
    w: Vec<f64>,
    width: usize,
    k: usize,
}

impl Flat {
    fn new(recs: &[&AdapterRecord], k: usize) -> Self {
        let width = recs.first().map_or(0, |r| r.state.len() + 2);
        let mut x = Vec::with_capacity(recs.len() * width);
        let mut w = Vec::with_capacity(recs.len() * k);
        for r in recs {
            x.extend_from_slice(&r.state);
            x.extend_from_slice(&r.c_high);
            w.extend_from_slice(&r.w_real);
        }
        Self { x, w, width, k }
    }

    fn len(&self) -> usize {
        self.w.len() / self.k
    }

    fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<f64>), NnError> {
        let mut x = Vec::with_capacity(idx.len() * self.width);
        let mut w = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            x.extend_from_slice(&self.x[i * self.width..(i + 1) * self.width]);
            w.extend_from_slice(&self.w[i * self.k..(i + 1) * self.k]);
        }
        Ok((Tensor::matrix(idx.len(), self.width, x)?, w))
    }
}

fn bits(net: &DenseNet) -> Vec<u64> {
    net.params_flat().iter().map(|v| v.to_bits()).collect()
}

fn step(adam: &mut AdamState, net: &mut DenseNet, grads: &NetGrads, what: &str, epoch: usize, batch: usize) -> Result<(), AdapterError> {
    match adam.step(net, grads) {
        Err(NnError::NonFiniteGradient { .. }) => Err(AdapterError::NonFinite { what: format!("{what} gradient"), epoch, batch }),
        r => Ok(r?),
    }
}

/// Trains `generator` (a high-level gating net over `[state | c_high]`)
/// against a fresh discriminator. Each batch takes one discriminator step
/// followed by one generator step; the side not being updated is checked
/// for bitwise stability after every step.
pub fn train_adapter(ds: &AdapterDataset, generator: GatingNet, cfg: &GanConfig, seed: u64) -> Result<AdapterOutput, AdapterError> {
    cfg.validate()?;
    ds.validate()?;
    let k = ds.manifest.k;
    let mut g = generator;
    if g.kind != GatingKind::HighLevel || g.k() != k || g.state_dim() != ds.manifest.state_dim || g.control_dim() != 2 {
        return Err(AdapterError::Config(format!(
            "generator must be a high-level gating net with {} state inputs, 2 control inputs and {k} outputs",
            ds.manifest.state_dim
        )));
    }
    let train = Flat::new(&ds.split(Split::Train), k);
    let held = Flat::new(&ds.split(Split::Heldout), k);
    if train.len() == 0 || held.len() == 0 {
        return Err(AdapterError::Dataset("both splits must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Discriminator::new(k, &cfg.disc_hidden, &mut rng);
    let mut adam_g = AdamState::new(&g.net, cfg.lr);
    let mut adam_d = AdamState::new(&d.net, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut dl_sum, mut gl_sum, mut adv_sum, mut l1_sum, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let (x, wr) = train.gather(idx)?;
            let nonfinite = |what: &str| AdapterError::NonFinite { what: what.into(), epoch, batch: b };

            let at = |e: AdapterError| match e {
                AdapterError::Nn(NnError::NonFinite { .. }) | AdapterError::Policy(crate::policy::PolicyError::Nn(NnError::NonFinite { .. })) => {
                    AdapterError::NonFinite { what: "network value".into(), epoch, batch: b }
                }
                e => e,
            };
            let (wf, _) = g.forward_batch(&x).map_err(|e| at(e.into()))?;
            let dl = d_loss(&d, &wr, &wf).map_err(at)?;
            if !dl.total.is_finite() {
                return Err(nonfinite("discriminator loss"));
            }
            let g_before = bits(&g.net);
            step(&mut adam_d, &mut d.net, &dl.grads, "discriminator", epoch, b)?;
            if bits(&g.net) != g_before {
                return Err(AdapterError::FrozenBreach(format!("generator changed during a discriminator step (epoch {epoch}, batch {b})")));
            }

            let gl = g_loss(&g, &d, &x, &wr, cfg.lambda_adv, cfg.lambda_rec).map_err(at)?;
            if !gl.total.is_finite() {
                return Err(nonfinite("generator loss"));
            }
            let d_before = bits(&d.net);
            step(&mut adam_g, &mut g.net, &gl.grads, "generator", epoch, b)?;
            if bits(&d.net) != d_before {
                return Err(AdapterError::FrozenBreach(format!("discriminator changed during a generator step (epoch {epoch}, batch {b})")));
            }
            dl_sum += dl.total;
            gl_sum += gl.total;
            adv_sum += gl.adversarial;
            l1_sum += gl.reconstruction;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let rec = EpochRecord {
            epoch,
            d_loss: dl_sum / nb,
            g_loss: gl_sum / nb,
            g_adversarial: adv_sum / nb,
            train_l1: l1_sum / nb,
        };
        log::info!("adapter epoch {epoch}: d {:.4} g {:.4} l1 {:.5}", rec.d_loss, rec.g_loss, rec.train_l1);
        history.push(rec);
    }
    let report = heldout_report(&g, &d, &held, cfg, train.len())?;
    Ok(AdapterOutput { generator: g, discriminator: d, report, history })
}

fn heldout_report(g: &GatingNet, d: &Discriminator, held: &Flat, cfg: &GanConfig, train_records: usize) -> Result<AdapterReport, AdapterError> {
    let k = held.k;
    let n = held.len();
    let all: Vec<usize> = (0..n).collect();
    let (x, wr) = held.gather(&all)?;
    let mut wf = g.net.predict(&x)?.into_data();
    for row in wf.chunks_mut(k) {
        crate::policy::floor_weights(row);
    }
    let l1 = wf.iter().zip(&wr).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * k) as f64;
    let pr = d.predict(&wr)?;
    let pf = d.predict(&wf)?;
    let correct = pr.iter().filter(|&&p| p > 0.5).count() + pf.iter().filter(|&&p| p < 0.5).count();
    let real_rows: Vec<Vec<f64>> = wr.chunks(k).map(<[f64]>::to_vec).collect();
    let pca = pca_project(&real_rows)?;
    let pr2: Vec<[f64; 2]> = real_rows.iter().map(|r| pca.project(r)).collect();
    let pf2: Vec<[f64; 2]> = wf.chunks(k).map(|r| pca.project(r)).collect();
    Ok(AdapterReport {
        lambda_rec: cfg.lambda_rec,
        lambda_adv: cfg.lambda_adv,
        epochs: cfg.epochs,
        train_records,
        heldout_records: n,
        heldout_l1: l1,
        d_accuracy: correct as f64 / (2 * n) as f64,
        pca_overlap: occupancy_overlap(&pr2, &pf2, cfg.pca_cell),
    })
}
