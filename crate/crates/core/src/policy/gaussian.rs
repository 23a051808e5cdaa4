use super::PolicyError;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub const VAR_FLOOR: f64 = 1e-12;

/// Diagonal Gaussian produced by composing primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl CompositeGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self, PolicyError> {
        if mean.len() != var.len() {
            return Err(PolicyError::Dim {
                what: "variance",
                expected: mean.len(),
                found: var.len(),
            });
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(PolicyError::InvalidVariance(*v));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Multiplicative composition of Gaussian primitives with per-primitive
/// diagonal variances (`vars[i][d]`).
///
/// `var_d = 1 / Σ_i w_i/σ²_{i,d}`, `mean_d = var_d · Σ_i w_i μ_{i,d}/σ²_{i,d}`.
pub fn compose_general(w: &[f64], means: &[Vec<f64>], vars: &[Vec<f64>]) -> Result<CompositeGaussian, PolicyError> {
    if means.len() != w.len() || vars.len() != w.len() {
        return Err(PolicyError::Dim {
            what: "primitive count",
            expected: w.len(),
            found: means.len().min(vars.len()),
        });
    }
    if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(PolicyError::NegativeWeight);
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(PolicyError::CompositionUndefined);
    }
    let dim = means.first().map_or(0, Vec::len);
    if means.iter().chain(vars).any(|m| m.len() != dim) {
        return Err(PolicyError::Dim {
            what: "primitive width",
            expected: dim,
            found: means.iter().chain(vars).map(Vec::len).find(|&l| l != dim).unwrap_or(dim),
        });
    }
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    for d in 0..dim {
        let (mut prec, mut acc) = (0.0, 0.0);
        for i in 0..w.len() {
            let p = w[i] / vars[i][d];
            prec += p;
            acc += p * means[i][d];
        }
        var[d] = 1.0 / prec;
        mean[d] = acc / prec;
    }
    CompositeGaussian::new(mean, var)
}

/// Composition with one shared diagonal covariance `sigma2[d]`.
pub fn compose(w: &[f64], means: &[Vec<f64>], sigma2: &[f64]) -> Result<CompositeGaussian, PolicyError> {
    let vars = vec![sigma2.to_vec(); w.len()];
    compose_general(w, means, &vars)
}

pub fn sample<R: Rng + ?Sized>(cg: &CompositeGaussian, rng: &mut R) -> Vec<f64> {
    cg.mean
        .iter()
        .zip(&cg.var)
        .map(|(&m, &v)| {
            let z: f64 = rng.sample(StandardNormal);
            m + v.max(VAR_FLOOR).sqrt() * z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogProb {
    pub value: f64,
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
}

pub fn log_prob(cg: &CompositeGaussian, a: &[f64]) -> Result<LogProb, PolicyError> {
    if a.len() != cg.dim() {
        return Err(PolicyError::Dim {
            what: "action",
            expected: cg.dim(),
            found: a.len(),
        });
    }
    let mut value = 0.0;
    let mut d_mean = Vec::with_capacity(a.len());
    let mut d_var = Vec::with_capacity(a.len());
    for ((&x, &m), &v) in a.iter().zip(&cg.mean).zip(&cg.var) {
        let e = x - m;
        value -= 0.5 * ((2.0 * PI * v).ln() + e * e / v);
        d_mean.push(e / v);
        d_var.push(0.5 * (e * e / (v * v) - 1.0 / v));
    }
    Ok(LogProb { value, d_mean, d_var })
}
