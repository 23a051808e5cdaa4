use super::EvalError;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Top-2 principal directions, unit length, first nonzero entry positive.
    pub components: [Vec<f64>; 2],
    pub explained: [f64; 2],
    pub points: Vec<[f64; 2]>,
    /// Fewer than two nonzero eigenvalues.
    pub rank_deficient: bool,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> [f64; 2] {
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let dot = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        [dot(&self.components[0]), dot(&self.components[1])]
    }
}

fn canonical_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12).copied() {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Top-2 principal-component projection of `samples` (rows).
pub fn pca_project(samples: &[Vec<f64>]) -> Result<Pca, EvalError> {
    let n = samples.len();
    if n < 10 {
        return Err(EvalError::Input(format!("PCA needs at least 10 samples, got {n}")));
    }
    let d = samples[0].len();
    if d < 2 || samples.iter().any(|s| s.len() != d) {
        return Err(EvalError::Input("PCA needs equal-width samples of dimension >= 2".into()));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let a = s[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += a * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let comp = |k: usize| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        canonical_sign(&mut v);
        v
    };
    let components = [comp(0), comp(1)];
    let lam = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
    let explained = if total > 0.0 { [lam[0] / total, lam[1] / total] } else { [0.0, 0.0] };
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rank_deficient = lam[1] <= 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut pca = Pca {
        mean,
        components,
        explained,
        points: Vec::new(),
        rank_deficient,
    };
    pca.points = samples.iter().map(|s| pca.project(s)).collect();
    Ok(pca)
}

/// IoU of the cells of side `cell` occupied by two 2-D point sets.
pub fn occupancy_overlap(a: &[[f64; 2]], b: &[[f64; 2]], cell: f64) -> f64 {
    let grid = |pts: &[[f64; 2]]| -> HashSet<(i64, i64)> {
        pts.iter().map(|p| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)).collect()
    };
    let (ga, gb) = (grid(a), grid(b));
    let union = ga.union(&gb).count();
    if union == 0 {
        return 0.0;
    }
    ga.intersection(&gb).count() as f64 / union as f64
}
