//! On-policy training: rollouts, advantage estimation, PPO and the two
//! training stages.

mod advantage;
mod config;
mod ppo;
mod rollout;
mod schedule;
mod scripted;
mod stage;

pub use advantage::{gae, normalize_advantages, td_lambda_targets};
pub use config::{Objective, PpoConfig, ScheduleConfig};
pub use ppo::{l_reg, l_reg_grad, ppo_update, surrogate_loss, value_loss, value_net, Batch, Optimizers, SurrogateStats, UpdateStats};
pub use rollout::{episode_seed, ActMode, EpisodeCursor, EvalSummary, Rollout, RolloutBatch, Task, Trajectory};
pub use schedule::CommandSchedule;
pub use scripted::{run_script, speed_script};
pub use stage::{checkpoint_normalizer, random_baseline, run_stage, Flow, train_imitation, IterationRecord, PpoTrainer, StageConfig, StageOutput, EVAL_STREAM};

use crate::env::EnvError;
use crate::nn::NnError;
use crate::policy::PolicyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {0}; iteration aborted and parameters restored")]
    NonFinite(String),
    #[error("invariant breach: {0}")]
    FrozenBreach(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
