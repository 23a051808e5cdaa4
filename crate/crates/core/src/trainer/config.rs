use super::TrainError;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Speed,
    Heading,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Speed => "speed",
            Objective::Heading => "heading",
        }
    }

    pub fn value_net_name(self) -> &'static str {
        match self {
            Objective::Speed => "value_speed",
            Objective::Heading => "value_heading",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub td_lambda: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub workers: usize,
    pub steps_per_iter: usize,
    pub minibatch: usize,
    pub epochs: usize,
    /// Weight of the L1 anchor term; used only when fine-tuning.
    pub reg_weight: f64,
    pub value_hidden: Vec<usize>,
    /// Optional global gradient-norm clip applied per network.
    pub max_grad_norm: Option<f64>,
}

impl PpoConfig {
    pub fn imitation() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.95,
            gae_lambda: 0.95,
            td_lambda: 0.95,
            policy_lr: 2.5e-6,
            value_lr: 1e-2,
            workers: 8,
            steps_per_iter: 4096,
            minibatch: 256,
            epochs: 4,
            reg_weight: 0.0,
            value_hidden: vec![256, 256],
            max_grad_norm: None,
        }
    }

    pub fn finetune() -> Self {
        Self {
            gamma: 0.99,
            policy_lr: 5e-5,
            reg_weight: 0.001,
            ..Self::imitation()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must be in (0, 1), got {}", self.clip));
        }
        for (n, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda), ("td_lambda", self.td_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{n} must be in [0, 1], got {v}"));
            }
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.workers == 0 || self.minibatch == 0 || self.epochs == 0 {
            return bad("workers, minibatch and epochs must be >= 1".into());
        }
        if !(self.reg_weight >= 0.0) {
            return bad(format!("reg_weight must be >= 0, got {}", self.reg_weight));
        }
        if self.value_hidden.iter().any(|&w| w == 0) {
            return bad("value_hidden widths must be >= 1".into());
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return bad(format!("max_grad_norm must be positive, got {g}"));
            }
        }
        Ok(())
    }
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::imitation()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub rate_hz: f64,
    pub speed_offset: f64,
    pub heading_offset: f64,
    pub switch_prob: f64,
    pub speed_bounds: [f64; 2],
    pub heading_bounds: [f64; 2],
    /// Constant speed used by the heading objective.
    pub heading_speed: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            rate_hz: 4.0,
            speed_offset: 0.25,
            heading_offset: 0.15,
            switch_prob: 0.1,
            speed_bounds: [0.0, 4.0],
            heading_bounds: [-PI, PI],
            heading_speed: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.rate_hz > 0.0
            && self.speed_offset >= 0.0
            && self.heading_offset >= 0.0
            && (0.0..=1.0).contains(&self.switch_prob)
            && self.speed_bounds[0] <= self.speed_bounds[1]
            && self.heading_bounds[0] <= self.heading_bounds[1];
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid command schedule {self:?}")))
        }
    }
}
