use super::AdapterError;
use crate::env::{c_high_features, EnvConfig, ObsNormalizer, QuadrupedEnv, QuadrupedModel};
use crate::policy::McpPolicy;
use crate::refmotion::{derive_high_level, ReferenceClip};
use crate::rewards::RewardWeights;
use crate::trainer::{episode_seed, ActMode, Rollout, Task};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

/// One visited state with both control encodings and the low-level weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    pub state: Vec<f64>,
    /// Omitted from files written without it; it is only needed to
    /// recompute `w_real`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_low: Option<Vec<f64>>,
    pub c_high: [f64; 2],
    pub w_real: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: usize,
    pub heldout: usize,
    pub k: usize,
    pub state_dim: usize,
    pub seed: u64,
    pub episodes: u64,
    /// Episodes cut short by simulation divergence.
    pub diverged: u64,
    pub clip_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterDataset {
    pub manifest: DatasetManifest,
    pub records: Vec<AdapterRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Line {
    Manifest(DatasetManifest),
    Record(AdapterRecord),
}

impl AdapterDataset {
    pub fn split(&self, which: Split) -> Vec<&AdapterRecord> {
        self.records.iter().filter(|r| r.split == which).collect()
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        let m = &self.manifest;
        if self.records.len() != m.records {
            return Err(AdapterError::Dataset(format!("manifest lists {} records, found {}", m.records, self.records.len())));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.w_real.len() != m.k || r.state.len() != m.state_dim {
                return Err(AdapterError::Dataset(format!("record {i} has the wrong width")));
            }
            if r.w_real.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(AdapterError::Dataset(format!("record {i} has an invalid w_real")));
            }
            if r.state.iter().chain(&r.c_high).any(|v| !v.is_finite()) {
                return Err(AdapterError::Dataset(format!("record {i} has a non-finite feature")));
            }
        }
        let held = self.records.iter().filter(|r| r.split == Split::Heldout).count();
        if held != m.heldout {
            return Err(AdapterError::Dataset(format!("manifest lists {} held-out records, found {held}", m.heldout)));
        }
        Ok(())
    }

    /// JSON-Lines: a manifest line, then one line per record.
    pub fn save(&self, path: &Path, with_c_low: bool) -> Result<(), AdapterError> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut out, &Line::Manifest(self.manifest.clone()))?;
        out.write_all(b"\n")?;
        for r in &self.records {
            let line = if with_c_low || r.c_low.is_none() {
                serde_json::to_string(&Line::Record(r.clone()))?
            } else {
                serde_json::to_string(&Line::Record(AdapterRecord { c_low: None, ..r.clone() }))?
            };
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut manifest = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| AdapterError::Dataset(format!("line {}: {e}", i + 1)))? {
                Line::Manifest(m) if manifest.is_none() && records.is_empty() => manifest = Some(m),
                Line::Manifest(_) => return Err(AdapterError::Dataset(format!("line {}: unexpected manifest", i + 1))),
                Line::Record(r) => records.push(r),
            }
        }
        let manifest = manifest.ok_or_else(|| AdapterError::Dataset("missing manifest line".into()))?;
        let ds = Self { manifest, records };
        ds.validate()?;
        Ok(ds)
    }
}

/// Rolls the low-level policy on `clip` (sampled actions, random start
/// frames) and records `n` tuples. Episodes that diverge keep the steps
/// recorded before the failure. One record in ten, chosen by `seed`, is
/// held out.
#[allow(clippy::too_many_arguments)]
pub fn collect_dataset(
    policy: &McpPolicy,
    normalizer: &ObsNormalizer,
    clip: &ReferenceClip,
    model: &QuadrupedModel,
    env_cfg: &EnvConfig,
    n: usize,
    seed: u64,
) -> Result<AdapterDataset, AdapterError> {
    if n < 1000 {
        return Err(AdapterError::Config(format!("dataset needs at least 1000 records, got {n}")));
    }
    let weights = RewardWeights::default();
    let rollout = Rollout {
        policy,
        value: None,
        normalizer,
        model,
        env: env_cfg,
        weights: &weights,
        task: Task::Imitation { clip },
    };
    let mut env = QuadrupedEnv::new(model.clone(), env_cfg.clone()).map_err(crate::trainer::TrainError::from)?;
    let mut records = Vec::with_capacity(n);
    let (mut episodes, mut diverged) = (0u64, 0u64);
    while records.len() < n {
        let (traj, err) = rollout.run_episode(&mut env, episodes, episode_seed(seed, episodes), n - records.len(), ActMode::Sample)?;
        if let Some(e) = err {
            log::warn!("episode {episodes} diverged after {} steps: {e}", traj.len());
            diverged += 1;
        }
        for t in 0..traj.len() {
            let cmd = derive_high_level(clip, traj.start_frame + t).map_err(|e| AdapterError::Dataset(e.to_string()))?;
            let w_real = policy.gating_low.gate(&traj.states[t], &traj.controls[t])?;
            records.push(AdapterRecord {
                state: traj.states[t].clone(),
                c_low: Some(traj.controls[t].clone()),
                c_high: c_high_features(cmd.speed, cmd.heading_delta),
                w_real,
                split: Split::Train,
            });
        }
        episodes += 1;
        if episodes > 100 * n as u64 {
            return Err(AdapterError::Dataset("episodes produce no steps".into()));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5911));
    let heldout = n / 10;
    for &i in &order[..heldout] {
        records[i].split = Split::Heldout;
    }
    let manifest = DatasetManifest {
        records: n,
        heldout,
        k: policy.k(),
        state_dim: policy.gating_low.state_dim(),
        seed,
        episodes,
        diverged,
        clip_sha256: clip.sha256(),
    };
    let ds = AdapterDataset { manifest, records };
    ds.validate()?;
    Ok(ds)
}
