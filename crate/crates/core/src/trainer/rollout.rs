use super::config::{Objective, ScheduleConfig};
use super::schedule::CommandSchedule;
use super::TrainError;
use crate::env::{c_high_features, Action, AgentState, EnvConfig, EnvError, ObsNormalizer, QuadrupedEnv, QuadrupedModel, ACTION_DIM, NUM_JOINTS};
use crate::nn::DenseNet;
use crate::policy::{log_prob, Level, McpPolicy};
use crate::refmotion::{Command, ReferenceClip};
use crate::rewards::{r_heading, r_imitation, r_speed, RewardWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One episode of on-policy experience; all per-step arrays are parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode: u64,
    pub start_frame: usize,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal: Vec<bool>,
    pub commands: Vec<Command>,
    /// `V(s_T)` after a truncation, 0 after a termination.
    pub bootstrap: f64,
}

impl Trajectory {
    fn empty(episode: u64, start_frame: usize) -> Self {
        Self {
            episode,
            start_frame,
            states: Vec::new(),
            controls: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            terminal: Vec::new(),
            commands: Vec::new(),
            bootstrap: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn terminated(&self) -> bool {
        self.terminal.last().copied().unwrap_or(false)
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        [
            self.states.len(),
            self.controls.len(),
            self.actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.terminal.len(),
            self.commands.len(),
        ]
        .iter()
        .all(|&l| l == n)
            && self.log_probs.iter().all(|v| v.is_finite())
    }
}

/// What the agent is asked to do during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Task<'a> {
    /// Track the clip; control input is the next two reference frames.
    Imitation { clip: &'a ReferenceClip },
    /// Follow a randomised user command; the clip only supplies start states.
    Command {
        clip: &'a ReferenceClip,
        objective: Objective,
        schedule: &'a ScheduleConfig,
    },
}

impl Task<'_> {
    pub fn level(&self) -> Level {
        match self {
            Task::Imitation { .. } => Level::Low,
            Task::Command { .. } => Level::High,
        }
    }

    pub fn clip(&self) -> &ReferenceClip {
        match self {
            Task::Imitation { clip } | Task::Command { clip, .. } => clip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    /// Composite mean.
    Mean,
    /// Uniform within the joint limits and yaw-rate bound.
    Uniform,
}

/// Read-only snapshot shared by rollout workers.
#[derive(Debug, Clone, Copy)]
pub struct Rollout<'a> {
    pub policy: &'a McpPolicy,
    /// Value estimates are 0 when absent.
    pub value: Option<&'a DenseNet>,
    pub normalizer: &'a ObsNormalizer,
    pub model: &'a QuadrupedModel,
    pub env: &'a EnvConfig,
    pub weights: &'a RewardWeights,
    pub task: Task<'a>,
}

/// Episode-index streams: worker `w` of `n` runs episodes `w, w+n, w+2n, ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeCursor {
    next: Vec<u64>,
}

impl EpisodeCursor {
    pub fn new(workers: usize) -> Self {
        Self {
            next: (0..workers.max(1) as u64).collect(),
        }
    }

    pub fn workers(&self) -> usize {
        self.next.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    /// Episodes lost to simulation divergence.
    pub dropped: Vec<(u64, String)>,
}

impl RolloutBatch {
    pub fn steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

struct Episode {
    frame: usize,
    schedule: Option<CommandSchedule>,
    step: u64,
}

pub fn episode_seed(run_seed: u64, episode: u64) -> u64 {
    run_seed.wrapping_add(episode)
}

impl<'a> Rollout<'a> {
    fn control(&self, ep: &Episode, agent: &AgentState) -> (Vec<f64>, Command) {
        match self.task {
            Task::Imitation { clip } => {
                let last = clip.len() - 1;
                let c = self
                    .normalizer
                    .c_low(agent, clip.state((ep.frame + 1).min(last)), clip.state((ep.frame + 2).min(last)));
                (c, clip.commands[ep.frame.min(last)])
            }
            Task::Command { .. } => {
                let cmd = ep.schedule.as_ref().expect("command task has a schedule").command(agent.yaw);
                (c_high_features(cmd.speed, cmd.heading_delta).to_vec(), cmd)
            }
        }
    }

    fn value_of(&self, s: &[f64], c: &[f64]) -> Result<f64, TrainError> {
        match self.value {
            None => Ok(0.0),
            Some(v) => {
                let mut x = Vec::with_capacity(s.len() + c.len());
                x.extend_from_slice(s);
                x.extend_from_slice(c);
                Ok(v.predict_one(&x)?[0])
            }
        }
    }

    fn uniform_action<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut a = Vec::with_capacity(ACTION_DIM);
        for j in 0..NUM_JOINTS {
            let (lo, hi) = self.model.joint_limits(j);
            a.push(rng.random_range(lo..=hi));
        }
        let y = self.env.max_yaw_rate;
        a.push(rng.random_range(-y..=y));
        a
    }

    /// Runs one episode of at most `limit` steps. A simulation failure ends
    /// the episode and is returned alongside the steps recorded before it.
    pub fn run_episode(
        &self,
        env: &mut QuadrupedEnv,
        episode: u64,
        seed: u64,
        limit: usize,
        mode: ActMode,
    ) -> Result<(Trajectory, Option<EnvError>), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = self.task.clip();
        if clip.len() < 3 {
            return Err(TrainError::Config("clip needs at least 3 frames".into()));
        }
        let frame = rng.random_range(0..clip.len() - 2);
        env.reset_from_reference(clip.state(frame))?;
        let mut ep = Episode {
            frame,
            schedule: match self.task {
                Task::Imitation { .. } => None,
                Task::Command { objective, schedule, .. } => {
                    let c = clip.commands[frame];
                    let psi = clip.state(frame).yaw;
                    Some(CommandSchedule::new(schedule.clone(), objective, c.speed, crate::physics::wrap_angle(psi + c.heading_delta)))
                }
            },
            step: 0,
        };
        let mut traj = Trajectory::empty(episode, frame);
        let mut agent = env.observe();
        let level = self.task.level();
        let hz = self.env.control_hz as f64;
        let mut s = self.normalizer.state(&agent);
        while traj.len() < limit {
            let (c, cmd) = self.control(&ep, &agent);
            let (a, lp) = match mode {
                ActMode::Uniform => (self.uniform_action(&mut rng), 0.0),
                _ => {
                    let (a, cg) = self.policy.act(level, &s, &c, mode == ActMode::Mean, &mut rng)?;
                    let lp = log_prob(&cg, &a)?.value;
                    (a, lp)
                }
            };
            let v = self.value_of(&s, &c)?;
            let info = match env.step(&Action::from_slice(&a)?) {
                Ok(i) => i,
                Err(e @ EnvError::Physics(_)) => return Ok((traj, Some(e))),
                Err(e) => return Err(e.into()),
            };
            ep.frame += 1;
            ep.step += 1;
            let reward = match self.task {
                Task::Imitation { clip } => r_imitation(&info.state, clip.state(ep.frame), self.weights),
                Task::Command { objective, .. } => match objective {
                    Objective::Speed => r_speed(cmd.speed, info.state.heading_velocity, self.weights.lambda_speed),
                    Objective::Heading => {
                        let th = ep.schedule.as_ref().map_or(0.0, |sc| sc.target_heading);
                        r_heading(th, info.state.heading_velocity)
                    }
                },
            };
            if let Some(sc) = ep.schedule.as_mut() {
                sc.advance(ep.step, hz, &mut rng);
            }
            traj.states.push(std::mem::take(&mut s));
            traj.controls.push(c);
            traj.actions.push(a);
            traj.log_probs.push(lp);
            traj.rewards.push(reward);
            traj.values.push(v);
            traj.commands.push(cmd);
            traj.terminal.push(info.terminated);
            agent = info.state;
            s = self.normalizer.state(&agent);
            if info.terminated {
                return Ok((traj, None));
            }
            let clip_end = matches!(self.task, Task::Imitation { .. }) && ep.frame + 2 >= clip.len();
            if info.truncated || clip_end {
                break;
            }
        }
        let (c, _) = self.control(&ep, &agent);
        traj.bootstrap = self.value_of(&s, &c)?;
        Ok((traj, None))
    }

    fn worker(&self, worker: usize, first: u64, stride: u64, steps: usize, seed: u64) -> Result<(Vec<Trajectory>, Vec<(u64, String)>, u64), TrainError> {
        let mut env = QuadrupedEnv::new(self.model.clone(), self.env.clone())?;
        let (mut out, mut dropped) = (Vec::new(), Vec::new());
        let mut e = first;
        let mut remaining = steps;
        let _ = worker;
        while remaining > 0 {
            let (traj, err) = self.run_episode(&mut env, e, episode_seed(seed, e), remaining, ActMode::Sample)?;
            match err {
                Some(err) => {
                    log::warn!("episode {e} dropped: {err}");
                    dropped.push((e, err.to_string()));
                    // The lost steps still count against the budget so a
                    // diverging policy cannot stall collection.
                    remaining -= traj.len().max(1).min(remaining);
                }
                None => {
                    remaining -= traj.len().max(1).min(remaining);
                    if !traj.is_empty() {
                        out.push(traj);
                    }
                }
            }
            e += stride;
        }
        Ok((out, dropped, e))
    }

    /// Collects `n_steps` of experience split over the cursor's workers.
    /// Output order depends only on the seed and worker count.
    pub fn collect(&self, n_steps: usize, seed: u64, cursor: &mut EpisodeCursor) -> Result<RolloutBatch, TrainError> {
        let n = cursor.workers();
        let share = |w: usize| n_steps / n + usize::from(w < n_steps % n);
        let results: Vec<Result<_, TrainError>> = if n == 1 {
            vec![self.worker(0, cursor.next[0], 1, n_steps, seed)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..n)
                    .map(|w| {
                        let first = cursor.next[w];
                        scope.spawn(move || self.worker(w, first, n as u64, share(w), seed))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
            })
        };
        let mut batch = RolloutBatch::default();
        for (w, r) in results.into_iter().enumerate() {
            let (t, d, next) = r?;
            cursor.next[w] = next;
            batch.trajectories.extend(t);
            batch.dropped.extend(d);
        }
        Ok(batch)
    }

    /// Pooled mean per-step reward over `episodes` episodes seeded `seed + j`.
    pub fn evaluate(&self, episodes: usize, seed: u64, mode: ActMode) -> Result<EvalSummary, TrainError> {
        let mut env = QuadrupedEnv::new(self.model.clone(), self.env.clone())?;
        let (mut total, mut steps, mut dropped) = (0.0, 0usize, 0usize);
        for j in 0..episodes as u64 {
            let (t, err) = self.run_episode(&mut env, j, episode_seed(seed, j), usize::MAX, mode)?;
            if err.is_some() {
                dropped += 1;
            }
            total += t.rewards.iter().sum::<f64>();
            steps += t.len();
        }
        Ok(EvalSummary {
            episodes,
            steps,
            dropped,
            mean_reward: if steps == 0 { 0.0 } else { total / steps as f64 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub steps: usize,
    pub dropped: usize,
    pub mean_reward: f64,
}
