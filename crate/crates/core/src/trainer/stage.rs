use super::config::{Objective, PpoConfig, ScheduleConfig};
use super::ppo::{ppo_update, value_net, Batch, Optimizers, UpdateStats};
use super::rollout::{ActMode, EpisodeCursor, EvalSummary, Rollout, Task};
use super::TrainError;
use crate::env::{EnvConfig, ObsNormalizer, QuadrupedModel, ACTION_DIM, C_HIGH_DIM, REF_DIM, STATE_DIM};
use crate::nn::{Checkpoint, CheckpointMeta, DenseNet};
use crate::policy::{Level, McpPolicy, PolicyConfig};
use crate::refmotion::ReferenceClip;
use crate::rewards::RewardWeights;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const INIT_STREAM: u64 = 0x2545_f491_4f6c_dd1d;
/// Eval episodes draw from a stream disjoint from the training episodes.
pub const EVAL_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub ppo: PpoConfig,
    pub iterations: usize,
    /// Wall-clock stop, checked between iterations.
    pub time_budget_s: Option<f64>,
    /// Evaluate every this many iterations (and after the last one).
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl StageConfig {
    pub fn imitation() -> Self {
        Self {
            ppo: PpoConfig::imitation(),
            iterations: 1000,
            time_budget_s: None,
            eval_every: 10,
            eval_episodes: 20,
        }
    }

    pub fn finetune() -> Self {
        Self {
            ppo: PpoConfig::finetune(),
            ..Self::imitation()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.ppo.validate()?;
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub steps: usize,
    pub episodes: usize,
    pub dropped: usize,
    pub mean_reward: f64,
    pub eval_reward: Option<f64>,
    pub best_eval_reward: Option<f64>,
    pub update: UpdateStats,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Imitation,
    Command(Objective),
}

/// Shared state of one PPO stage.
#[derive(Debug, Clone)]
pub struct PpoTrainer<'a> {
    pub policy: McpPolicy,
    pub value: DenseNet,
    pub normalizer: ObsNormalizer,
    pub cfg: PpoConfig,
    pub model: QuadrupedModel,
    pub env: EnvConfig,
    pub weights: RewardWeights,
    pub schedule: ScheduleConfig,
    pub anchor: Option<DenseNet>,
    clip: &'a ReferenceClip,
    objective: Objective,
    mode: Mode,
    opt: Optimizers,
    cursor: EpisodeCursor,
    shuffle: ChaCha8Rng,
    seed: u64,
    iteration: usize,
}

#[allow(clippy::too_many_arguments)]
impl<'a> PpoTrainer<'a> {
    /// Fresh low-level policy for imitating `clip` under `objective`.
    pub fn imitation(
        clip: &'a ReferenceClip,
        objective: Objective,
        policy_cfg: &PolicyConfig,
        cfg: PpoConfig,
        model: QuadrupedModel,
        env: EnvConfig,
        weights: RewardWeights,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        env.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM);
        let mut policy = McpPolicy::new(policy_cfg, STATE_DIM, 2 * REF_DIM, C_HIGH_DIM, ACTION_DIM, &mut rng);
        let mut bias = model.nominal_angles().to_vec();
        bias.push(0.0);
        policy.primitive.set_output_bias(&bias)?;
        shrink_output_weights(&mut policy.primitive.net, 0.01);
        let value = value_net(objective.value_net_name(), STATE_DIM + 2 * REF_DIM, &cfg.value_hidden, &mut rng);
        let normalizer = ObsNormalizer::fit(clip.frames.iter().map(|f| &f.state));
        let opt = Optimizers::new(&policy, &value, Level::Low, &cfg);
        Ok(Self {
            cursor: EpisodeCursor::new(cfg.workers),
            shuffle: ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM),
            policy,
            value,
            normalizer,
            cfg,
            model,
            env,
            weights,
            schedule: ScheduleConfig::default(),
            anchor: None,
            clip,
            objective,
            mode: Mode::Imitation,
            opt,
            seed,
            iteration: 0,
        })
    }

    /// High-level stage starting from `ck` (a low-level checkpoint). When
    /// `adapter` is given it replaces `gating_high` and anchors the L1 term.
    pub fn finetune(
        ck: &Checkpoint,
        adapter: Option<DenseNet>,
        clip: &'a ReferenceClip,
        objective: Objective,
        policy_cfg: &PolicyConfig,
        cfg: PpoConfig,
        schedule: ScheduleConfig,
        model: QuadrupedModel,
        env: EnvConfig,
        weights: RewardWeights,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        env.validate()?;
        schedule.validate()?;
        let mut policy = McpPolicy::from_checkpoint(ck, policy_cfg.sigma2)?;
        let normalizer = checkpoint_normalizer(ck)?;
        let anchor = match adapter {
            Some(net) => {
                policy.gating_high = crate::policy::GatingNet::from_net(crate::policy::GatingKind::HighLevel, net, STATE_DIM)?;
                Some(policy.gating_high.net.clone())
            }
            None => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM);
        let control = policy.gating_high.control_dim();
        let value = value_net(objective.value_net_name(), STATE_DIM + control, &cfg.value_hidden, &mut rng);
        let opt = Optimizers::new(&policy, &value, Level::High, &cfg);
        Ok(Self {
            cursor: EpisodeCursor::new(cfg.workers),
            shuffle: ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM),
            policy,
            value,
            normalizer,
            cfg,
            model,
            env,
            weights,
            schedule,
            anchor,
            clip,
            objective,
            mode: Mode::Command(objective),
            opt,
            seed,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn stage_name(&self) -> String {
        match self.mode {
            Mode::Imitation => format!("imitation_{}", self.objective.as_str()),
            Mode::Command(o) => format!("finetune_{}", o.as_str()),
        }
    }

    pub fn rollout(&self) -> Rollout<'_> {
        Rollout {
            policy: &self.policy,
            value: Some(&self.value),
            normalizer: &self.normalizer,
            model: &self.model,
            env: &self.env,
            weights: &self.weights,
            task: match self.mode {
                Mode::Imitation => Task::Imitation { clip: self.clip },
                Mode::Command(objective) => Task::Command {
                    clip: self.clip,
                    objective,
                    schedule: &self.schedule,
                },
            },
        }
    }

    /// One collect → advantage → update cycle.
    pub fn iterate(&mut self) -> Result<IterationRecord, TrainError> {
        let start = Instant::now();
        let mut cursor = self.cursor.clone();
        let batch = self.rollout().collect(self.cfg.steps_per_iter, self.seed, &mut cursor)?;
        self.cursor = cursor;
        let train = Batch::from_trajectories(&batch.trajectories, &self.cfg)?;
        let rewards: f64 = batch.trajectories.iter().flat_map(|t| &t.rewards).sum();
        let update = ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.opt,
            &train,
            &self.cfg,
            self.anchor.as_ref(),
            &mut self.shuffle,
        )?;
        self.iteration += 1;
        Ok(IterationRecord {
            iteration: self.iteration,
            steps: train.n,
            episodes: batch.trajectories.len(),
            dropped: batch.dropped.len(),
            mean_reward: rewards / train.n as f64,
            eval_reward: None,
            best_eval_reward: None,
            update,
            wall_s: start.elapsed().as_secs_f64(),
        })
    }

    pub fn evaluate(&self, episodes: usize) -> Result<EvalSummary, TrainError> {
        self.rollout().evaluate(episodes, self.seed.wrapping_add(EVAL_STREAM), ActMode::Mean)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.policy.to_checkpoint(CheckpointMeta {
            stage: self.stage_name(),
            seed: self.seed,
            k: self.policy.k(),
            created_at: format!("iteration {}", self.iteration),
            obs_scale: Some(self.normalizer.scale.clone()),
        });
        ck.insert(self.value.name(), &self.value);
        ck
    }
}

fn shrink_output_weights(net: &mut DenseNet, factor: f64) {
    if let Some(last) = net.layers_mut().last_mut() {
        last.w.iter_mut().for_each(|w| *w *= factor);
    }
}

pub fn checkpoint_normalizer(ck: &Checkpoint) -> Result<ObsNormalizer, TrainError> {
    ck.meta
        .obs_scale
        .clone()
        .and_then(ObsNormalizer::from_scale)
        .ok_or_else(|| TrainError::Checkpoint("checkpoint lacks a valid observation scale".into()))
}

/// Returned by the per-iteration callback of [`run_stage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_eval_reward: f64,
    pub history: Vec<IterationRecord>,
}

/// Iterates `trainer` per `cfg`, keeping the checkpoint with the best eval
/// reward. `on_iter` sees every record and the trainer after the update and
/// may end the stage early.
pub fn run_stage(
    trainer: &mut PpoTrainer<'_>,
    cfg: &StageConfig,
    on_iter: &mut dyn FnMut(&IterationRecord, &PpoTrainer<'_>) -> Result<Flow, TrainError>,
) -> Result<StageOutput, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let initial = trainer.evaluate(cfg.eval_episodes)?.mean_reward;
    let mut best_eval = initial;
    let mut best = trainer.checkpoint();
    let mut history = Vec::new();
    for i in 0..cfg.iterations {
        if cfg.time_budget_s.is_some_and(|b| start.elapsed().as_secs_f64() >= b) {
            break;
        }
        let mut rec = match trainer.iterate() {
            Ok(r) => r,
            Err(TrainError::NonFinite(m)) => {
                log::warn!("iteration {} aborted: non-finite {m}", i + 1);
                continue;
            }
            Err(e) => return Err(e),
        };
        let out_of_time = cfg.time_budget_s.is_some_and(|b| start.elapsed().as_secs_f64() >= b);
        if (i + 1) % cfg.eval_every == 0 || i + 1 == cfg.iterations || out_of_time {
            let e = trainer.evaluate(cfg.eval_episodes)?.mean_reward;
            rec.eval_reward = Some(e);
            if e > best_eval {
                best_eval = e;
                best = trainer.checkpoint();
            }
        }
        rec.best_eval_reward = Some(best_eval);
        rec.wall_s = start.elapsed().as_secs_f64();
        let flow = on_iter(&rec, trainer)?;
        history.push(rec);
        if flow == Flow::Stop {
            break;
        }
    }
    Ok(StageOutput {
        best,
        last: trainer.checkpoint(),
        best_eval_reward: best_eval,
        history,
    })
}

/// Imitation stage for one objective's clip.
#[allow(clippy::too_many_arguments)]
pub fn train_imitation(
    clip: &ReferenceClip,
    objective: Objective,
    policy_cfg: &PolicyConfig,
    cfg: &StageConfig,
    model: QuadrupedModel,
    env: EnvConfig,
    weights: RewardWeights,
    seed: u64,
    on_iter: &mut dyn FnMut(&IterationRecord, &PpoTrainer<'_>) -> Result<Flow, TrainError>,
) -> Result<StageOutput, TrainError> {
    let mut t = PpoTrainer::imitation(clip, objective, policy_cfg, cfg.ppo.clone(), model, env, weights, seed)?;
    run_stage(&mut t, cfg, on_iter)
}

/// Uniform-random actions scored like the imitation eval.
pub fn random_baseline(
    clip: &ReferenceClip,
    model: QuadrupedModel,
    env: EnvConfig,
    weights: RewardWeights,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    let t = PpoTrainer::imitation(
        clip,
        Objective::Speed,
        &PolicyConfig {
            gating_hidden: vec![8],
            primitive_hidden: vec![8],
            ..PolicyConfig::default()
        },
        PpoConfig {
            value_hidden: vec![1],
            ..PpoConfig::imitation()
        },
        model,
        env,
        weights,
        seed,
    )?;
    t.rollout().evaluate(episodes, seed.wrapping_add(EVAL_STREAM), ActMode::Uniform)
}
