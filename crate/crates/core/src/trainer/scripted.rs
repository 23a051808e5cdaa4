use super::config::Objective;
use super::rollout::ActMode;
use super::TrainError;
use crate::env::{c_high_features, Action, AgentState, EnvConfig, EnvError, ObsNormalizer, QuadrupedEnv, QuadrupedModel};
use crate::eval::{Recording, RecordingMeta};
use crate::physics::wrap_angle;
use crate::policy::{Level, McpPolicy};
use crate::refmotion::{Command, Profile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Command script sampled from a speed profile every `1/rate_hz` seconds,
/// with no turning.
pub fn speed_script(profile: &Profile, duration: f64, rate_hz: f64) -> Vec<(f64, Command)> {
    let n = (duration * rate_hz).round().max(1.0) as usize;
    let dt = duration / n as f64;
    (0..n).map(|i| (dt, Command::new(profile.value(i as f64 * dt), 0.0))).collect()
}

/// Closed-loop run of the user-command policy under a timed script.
///
/// Under the heading objective each segment's `Δθ` sets a target heading
/// relative to the yaw at the segment start and the policy sees the
/// remaining error; under the speed objective it sees `Δθ` verbatim. The
/// run stops early if the agent falls or the simulation fails.
#[allow(clippy::too_many_arguments)]
pub fn run_script(
    policy: &McpPolicy,
    normalizer: &ObsNormalizer,
    model: &QuadrupedModel,
    env_cfg: &EnvConfig,
    start: &AgentState,
    script: &[(f64, Command)],
    objective: Objective,
    mode: ActMode,
    seed: u64,
    meta: RecordingMeta,
) -> Result<(Recording, Option<EnvError>), TrainError> {
    if mode == ActMode::Uniform {
        return Err(TrainError::Config("scripted runs use the policy".into()));
    }
    let hz = env_cfg.control_hz as f64;
    // Segment boundaries are rounded on the cumulative clock so rounding
    // does not accumulate.
    let mut clock = 0.0;
    let mut done = 0usize;
    let plan: Vec<(usize, Command)> = script
        .iter()
        .map(|&(d, c)| {
            clock += d;
            let end = (clock * hz).round() as usize;
            let steps = end.saturating_sub(done);
            done = done.max(end);
            (steps, c)
        })
        .collect();
    let total: usize = plan.iter().map(|p| p.0).sum();
    if total == 0 {
        return Err(TrainError::Config("script is shorter than one control step".into()));
    }
    let cfg = EnvConfig { max_steps: total, ..env_cfg.clone() };
    let mut env = QuadrupedEnv::new(model.clone(), cfg)?;
    env.reset_from_reference(start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = env.observe();
    let (mut states, mut commands) = (Vec::with_capacity(total), Vec::with_capacity(total));
    let mut failure = None;
    'outer: for (steps, cmd) in plan {
        let target = wrap_angle(agent.yaw + cmd.heading_delta);
        for _ in 0..steps {
            let dtheta = match objective {
                Objective::Speed => cmd.heading_delta,
                Objective::Heading => wrap_angle(target - agent.yaw),
            };
            let s = normalizer.state(&agent);
            let c = c_high_features(cmd.speed, dtheta);
            let (a, _) = policy.act(Level::High, &s, &c, mode == ActMode::Mean, &mut rng)?;
            match env.step(&Action::from_slice(&a)?) {
                Ok(info) => {
                    agent = info.state;
                    states.push(agent.clone());
                    commands.push(cmd);
                    if info.terminated {
                        break 'outer;
                    }
                }
                Err(e @ EnvError::Physics(_)) => {
                    failure = Some(e);
                    break 'outer;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    if states.is_empty() {
        return Err(TrainError::Config(format!("scripted run produced no steps ({failure:?})")));
    }
    let rec = Recording::new(meta, env_cfg.control_hz, states, commands).map_err(|e| TrainError::Config(e.to_string()))?;
    Ok((rec, failure))
}
