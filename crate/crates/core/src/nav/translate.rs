use super::grid::{GridMap, Pos};
use super::NavError;
use crate::physics::wrap_angle;
use crate::refmotion::Command;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Planar position and yaw; the agent moves along `(cos ψ, −sin ψ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 2],
    pub yaw: f64,
}

/// Timed command script. During a segment the heading turns by `Δθ` at a
/// constant rate while moving at `σ`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandSeq {
    pub segments: Vec<(f64, Command)>,
}

impl CommandSeq {
    fn push(&mut self, duration: f64, cmd: Command) {
        if duration > 1e-12 {
            self.segments.push((duration, cmd));
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.0).sum()
    }

    pub fn net_turn(&self) -> f64 {
        self.segments.iter().map(|s| s.1.heading_delta).sum()
    }

    /// Unicycle integration at `rate_hz`. Each step moves along the exact
    /// chord of its constant-rate arc.
    pub fn replay(&self, start: Pose, rate_hz: f64) -> Vec<Pose> {
        let dt = 1.0 / rate_hz;
        let mut p = start;
        let mut out = vec![p];
        for &(dur, cmd) in &self.segments {
            let steps = (dur / dt).ceil().max(1.0) as usize;
            let h = dur / steps as f64;
            let w = cmd.heading_delta / dur;
            for _ in 0..steps {
                let half = 0.5 * w * h;
                let mid = p.yaw + half;
                let chord = if half.abs() > 1e-12 { cmd.speed * h * half.sin() / half } else { cmd.speed * h };
                p.position[0] += chord * mid.cos();
                p.position[1] -= chord * mid.sin();
                p.yaw += w * h;
                out.push(p);
            }
        }
        out
    }
}

fn step_heading(a: Pos, b: Pos) -> Result<f64, NavError> {
    match (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize) {
        (1, 0) => Ok(0.0),
        (0, -1) => Ok(FRAC_PI_2),
        (-1, 0) => Ok(PI),
        (0, 1) => Ok(-FRAC_PI_2),
        d => Err(NavError::Input(format!("path cells {a:?} and {b:?} are not 4-adjacent ({d:?})"))),
    }
}

/// Turns a cell path into straight runs `(σ₀, 0)` joined by quarter turns
/// `(σ₀, ±½π)`.
///
/// Each corner is taken on an arc of radius half a cell, so straight runs
/// are shortened by that radius at every corner. When the agent's yaw does
/// not match the first step, an in-place turn `(0, Δψ)` comes first (a half
/// turn is two left quarter turns).
pub fn path_to_commands(map: &GridMap, path: &[Pos], cruise: f64, pose: Pose) -> Result<CommandSeq, NavError> {
    if path.len() < 2 {
        return Err(NavError::Input("path needs at least two cells".into()));
    }
    if !(cruise > 0.0) {
        return Err(NavError::Input(format!("cruise speed must be positive, got {cruise}")));
    }
    let cell = map.cell_size();
    let radius = 0.5 * cell;
    let turn_time = FRAC_PI_2 * radius / cruise;
    let headings = path.windows(2).map(|w| step_heading(w[0], w[1])).collect::<Result<Vec<_>, _>>()?;
    let mut seq = CommandSeq::default();

    let align = wrap_angle(headings[0] - pose.yaw);
    if (align.abs() - PI).abs() < 1e-9 {
        seq.push(turn_time, Command::new(0.0, FRAC_PI_2));
        seq.push(turn_time, Command::new(0.0, FRAC_PI_2));
    } else if align.abs() > 1e-9 {
        seq.push(turn_time * align.abs() / FRAC_PI_2, Command::new(0.0, align));
    }

    let mut run = 0.0;
    let mut shorten_start = false;
    for i in 0..headings.len() {
        run += cell;
        let turn = headings.get(i + 1).map(|&h| wrap_angle(h - headings[i]));
        match turn {
            Some(t) if t.abs() > 1e-9 => {
                let straight = run - radius - if shorten_start { radius } else { 0.0 };
                seq.push(straight / cruise, Command::new(cruise, 0.0));
                if (t.abs() - PI).abs() < 1e-9 {
                    return Err(NavError::Input(format!("path reverses at cell {:?}", path[i + 1])));
                }
                seq.push(turn_time, Command::new(cruise, t.signum() * FRAC_PI_2));
                run = 0.0;
                shorten_start = true;
            }
            _ => {}
        }
    }
    let straight = run - if shorten_start { radius } else { 0.0 };
    seq.push(straight / cruise, Command::new(cruise, 0.0));
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayConfig {
    pub rays: usize,
    pub fov: f64,
    pub range: f64,
    pub avoid_radius: f64,
    pub cruise: f64,
    /// Forward clearance below which σ scales down linearly.
    pub slow_clearance: f64,
    pub min_speed: f64,
    pub max_turn: f64,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self {
            rays: 9,
            fov: PI,
            range: 10.0,
            avoid_radius: 1.5,
            cruise: 1.0,
            slow_clearance: 2.0,
            min_speed: 0.2,
            max_turn: FRAC_PI_2,
        }
    }
}

/// Reactive steering from ray distances ordered right to left over the
/// field of view and a goal bearing relative to the heading (left positive).
///
/// An obstacle inside the avoid radius on the forward ray overrides the goal
/// and turns towards the side with more total clearance; equal clearance
/// turns left.
pub fn ray_navigate(rays: &[f64], goal_bearing: f64, cfg: &RayConfig) -> Result<Command, NavError> {
    if rays.len() < 3 {
        return Err(NavError::Input(format!("need at least 3 rays, got {}", rays.len())));
    }
    let n = rays.len();
    let d: Vec<f64> = rays.iter().map(|r| r.clamp(0.0, cfg.range)).collect();
    let forward = if n % 2 == 1 { d[n / 2] } else { d[n / 2 - 1].min(d[n / 2]) };
    let right: f64 = d[..n / 2].iter().sum();
    let left: f64 = d[n.div_ceil(2)..].iter().sum();
    let heading = if forward < cfg.avoid_radius {
        if left >= right {
            cfg.max_turn
        } else {
            -cfg.max_turn
        }
    } else {
        wrap_angle(goal_bearing).clamp(-cfg.max_turn, cfg.max_turn)
    };
    let speed = (cfg.cruise * (forward / cfg.slow_clearance).min(1.0)).max(cfg.min_speed);
    Ok(Command::new(speed, heading))
}
