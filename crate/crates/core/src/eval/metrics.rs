use super::EvalError;
use crate::env::{AgentState, NUM_LEGS};
use crate::physics::wrap_angle;
use crate::refmotion::Command;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub policy_id: String,
    pub seed: u64,
    pub scenario: String,
}

/// Agent states sampled at the control rate with the command active at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub frame_rate: u32,
    pub states: Vec<AgentState>,
    pub commands: Vec<Command>,
}

impl Recording {
    pub fn new(meta: RecordingMeta, frame_rate: u32, states: Vec<AgentState>, commands: Vec<Command>) -> Result<Self, EvalError> {
        if states.is_empty() || states.len() != commands.len() || frame_rate == 0 {
            return Err(EvalError::Input(format!(
                "recording needs matching nonempty state and command logs ({} vs {})",
                states.len(),
                commands.len()
            )));
        }
        Ok(Self { meta, frame_rate, states, commands })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn track(&self) -> Vec<TrackPoint> {
        self.states
            .iter()
            .map(|s| TrackPoint {
                yaw: s.yaw,
                position: s.ground_track,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    MeanStd { mean, std: var.sqrt(), n }
}

/// Mean over steps of `(σ − ‖v‖)²` with σ from the command log.
pub fn recording_speed_mse(rec: &Recording) -> f64 {
    let sum: f64 = rec
        .states
        .iter()
        .zip(&rec.commands)
        .map(|(s, c)| (c.speed - s.speed()).powi(2))
        .sum();
    sum / rec.len() as f64
}

/// Per-bucket (usually per gait) speed MSE aggregated across recordings.
/// Empty buckets are skipped with a warning.
pub fn speed_mse(buckets: &BTreeMap<String, Vec<Recording>>) -> BTreeMap<String, MeanStd> {
    let mut out = BTreeMap::new();
    for (name, recs) in buckets {
        if recs.is_empty() {
            log::warn!("speed_mse: bucket {name:?} has no recordings");
            continue;
        }
        if recs.len() < 2 {
            log::warn!("speed_mse: bucket {name:?} has a single recording; std is 0");
        }
        let v: Vec<f64> = recs.iter().map(recording_speed_mse).collect();
        out.insert(name.clone(), mean_std(&v));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub yaw: f64,
    pub position: [f64; 2],
}

/// Kinematic unicycle track of a timed command script. Each command's Δθ is
/// turned at a constant rate over its duration.
pub fn reference_arc(script: &[(f64, Command)], frame_rate: u32, start: TrackPoint) -> Vec<TrackPoint> {
    let dt = 1.0 / frame_rate as f64;
    let mut out = vec![start];
    let mut p = start;
    for &(dur, cmd) in script {
        let steps = (dur * frame_rate as f64).round().max(1.0) as usize;
        let rate = cmd.heading_delta / (steps as f64 * dt);
        for _ in 0..steps {
            let mid = p.yaw + 0.5 * rate * dt;
            p.position[0] += cmd.speed * mid.cos() * dt;
            p.position[1] -= cmd.speed * mid.sin() * dt;
            p.yaw += rate * dt;
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub angular_deg: f64,
    pub positional_m: f64,
    /// Inputs had different lengths; only the shorter prefix was compared.
    pub truncated: bool,
}

/// Trajectory-averaged heading and position deviation after aligning both
/// tracks at their first point.
pub fn heading_deviation(track: &[TrackPoint], reference: &[TrackPoint]) -> Result<Deviation, EvalError> {
    let n = track.len().min(reference.len());
    if n == 0 {
        return Err(EvalError::Input("heading deviation needs nonempty tracks".into()));
    }
    let (a0, b0) = (track[0].position, reference[0].position);
    let (mut ang, mut pos) = (0.0, 0.0);
    for (a, b) in track.iter().zip(reference).take(n) {
        ang += wrap_angle(a.yaw - b.yaw).abs();
        let dx = (a.position[0] - a0[0]) - (b.position[0] - b0[0]);
        let dy = (a.position[1] - a0[1]) - (b.position[1] - b0[1]);
        pos += (dx * dx + dy * dy).sqrt();
    }
    Ok(Deviation {
        angular_deg: (ang / n as f64).to_degrees(),
        positional_m: pos / n as f64,
        truncated: track.len() != reference.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_leg: [f64; NUM_LEGS],
    pub average: f64,
    /// Legs whose union occupancy was empty.
    pub empty: [bool; NUM_LEGS],
}

fn occupancy(states: &[AgentState], leg: usize, cell: f64) -> HashSet<(i64, i64)> {
    states
        .iter()
        .map(|s| {
            let [x, y] = s.feet[leg];
            ((x / cell).floor() as i64, (y / cell).floor() as i64)
        })
        .collect()
}

/// Per-leg IoU of torso-frame foot occupancy grids.
pub fn end_effector_iou(generated: &[AgentState], reference: &[AgentState], cell: f64) -> Result<IouReport, EvalError> {
    if !(cell > 0.0) {
        return Err(EvalError::Input(format!("grid cell must be positive, got {cell}")));
    }
    let mut per_leg = [0.0; NUM_LEGS];
    let mut empty = [false; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let a = occupancy(generated, leg, cell);
        let b = occupancy(reference, leg, cell);
        let union = a.union(&b).count();
        if union == 0 {
            empty[leg] = true;
            continue;
        }
        per_leg[leg] = a.intersection(&b).count() as f64 / union as f64;
    }
    Ok(IouReport {
        per_leg,
        average: per_leg.iter().sum::<f64>() / NUM_LEGS as f64,
        empty,
    })
}
