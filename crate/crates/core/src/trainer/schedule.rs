use super::config::{Objective, ScheduleConfig};
use crate::physics::wrap_angle;
use crate::refmotion::Command;
use rand::Rng;

/// Randomised user command evolving at a fixed tick rate.
///
/// The speed objective varies σ with Δθ = 0. The heading objective holds σ
/// at `heading_speed` and varies an absolute target heading θ̂; the control
/// input is then `wrap(θ̂ − ψ)`. Offsets accumulate and are clamped to the
/// bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSchedule {
    pub cfg: ScheduleConfig,
    pub objective: Objective,
    pub speed: f64,
    pub target_heading: f64,
    ticks: u64,
}

impl CommandSchedule {
    pub fn new(cfg: ScheduleConfig, objective: Objective, speed: f64, target_heading: f64) -> Self {
        let mut s = Self {
            speed: 0.0,
            target_heading: 0.0,
            cfg,
            objective,
            ticks: 0,
        };
        s.speed = match objective {
            Objective::Speed => s.clamp_speed(speed),
            Objective::Heading => s.cfg.heading_speed,
        };
        s.target_heading = s.clamp_heading(target_heading);
        s
    }

    fn clamp_speed(&self, v: f64) -> f64 {
        v.clamp(self.cfg.speed_bounds[0], self.cfg.speed_bounds[1])
    }

    fn clamp_heading(&self, v: f64) -> f64 {
        v.clamp(self.cfg.heading_bounds[0], self.cfg.heading_bounds[1])
    }

    /// Number of ticks that have fired so far.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Advances to control step `step` (at `control_hz`); applies one update
    /// per tick boundary crossed. Returns whether a tick fired.
    pub fn advance<R: Rng + ?Sized>(&mut self, step: u64, control_hz: f64, rng: &mut R) -> bool {
        let due = (step as f64 * self.cfg.rate_hz / control_hz + 1e-9).floor() as u64;
        let fired = due > self.ticks;
        while self.ticks < due {
            self.ticks += 1;
            self.update(rng);
        }
        fired
    }

    fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let switch = rng.random::<f64>() < self.cfg.switch_prob;
        match self.objective {
            Objective::Speed => {
                let [lo, hi] = self.cfg.speed_bounds;
                self.speed = if switch {
                    rng.random_range(lo..=hi)
                } else {
                    let d = self.cfg.speed_offset;
                    self.clamp_speed(self.speed + rng.random_range(-d..=d))
                };
            }
            Objective::Heading => {
                let [lo, hi] = self.cfg.heading_bounds;
                self.target_heading = if switch {
                    rng.random_range(lo..=hi)
                } else {
                    let d = self.cfg.heading_offset;
                    self.clamp_heading(self.target_heading + rng.random_range(-d..=d))
                };
            }
        }
    }

    /// Command as seen by an agent with yaw `psi`.
    pub fn command(&self, psi: f64) -> Command {
        match self.objective {
            Objective::Speed => Command::new(self.speed, 0.0),
            Objective::Heading => Command::new(self.speed, wrap_angle(self.target_heading - psi)),
        }
    }
}
