use super::model::{hip_joint, knee_joint, lower_link, upper_link, QuadrupedModel, NUM_JOINTS, NUM_LEGS, NUM_LINKS};
use super::state::{heading_velocity, AgentState, LinkState};
use super::EnvError;
use crate::physics::{pd_torque, rotate, BodyId, JointId, RevoluteJoint, RigidBody, Shape, Vec2, World, WorldConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ACTION_DIM: usize = NUM_JOINTS + 1;
const AGENT_GROUP: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub max_steps: usize,
    pub height_fraction: f64,
    pub max_pitch: f64,
    pub control_hz: u32,
    pub substeps: u32,
    pub max_yaw_rate: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            height_fraction: 0.6,
            max_pitch: 1.0,
            control_hz: 30,
            substeps: 40,
            max_yaw_rate: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.control_hz * self.substeps != 1200 {
            return Err(EnvError::Config(format!(
                "control_hz × substeps must be 1200, got {} × {}",
                self.control_hz, self.substeps
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub targets: [f64; NUM_JOINTS],
    pub yaw_rate: f64,
}

impl Action {
    pub fn from_slice(a: &[f64]) -> Result<Self, EnvError> {
        if a.len() != ACTION_DIM {
            return Err(EnvError::ActionDim {
                expected: ACTION_DIM,
                found: a.len(),
            });
        }
        if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EnvError::NonFiniteAction { index, value });
        }
        Ok(Self {
            targets: std::array::from_fn(|i| a[i]),
            yaw_rate: a[NUM_JOINTS],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.targets.to_vec();
        v.push(self.yaw_rate);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    BoxThrow,
    Slippery,
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub state: AgentState,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct QuadrupedEnv {
    pub model: QuadrupedModel,
    pub config: EnvConfig,
    world_config: WorldConfig,
    world: World,
    links: [BodyId; NUM_LINKS],
    joints: [JointId; NUM_JOINTS],
    targets: [f64; NUM_JOINTS],
    yaw: f64,
    yaw_rate: f64,
    ground_track: [f64; 2],
    steps: usize,
    base_friction: f64,
    contact_override: Option<([bool; NUM_LEGS], bool)>,
}

/// Whole-body failure: torso too low, pitched over, or a non-foot link on the ground.
pub fn check_termination(state: &AgentState, model: &QuadrupedModel, config: &EnvConfig) -> bool {
    state.torso_height() < config.height_fraction * model.nominal_height()
        || state.pitch().abs() > config.max_pitch
        || state.non_foot_contact
}

impl QuadrupedEnv {
    pub fn new(model: QuadrupedModel, config: EnvConfig) -> Result<Self, EnvError> {
        Self::with_world_config(model, config, WorldConfig::default())
    }

    pub fn with_world_config(model: QuadrupedModel, config: EnvConfig, world_config: WorldConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let base_friction = world_config.ground.map_or(0.0, |g| g.friction);
        let (world, links, joints) = build_world(&model, &world_config)?;
        let mut env = Self {
            targets: model.nominal_angles(),
            model,
            config,
            world_config,
            world,
            links,
            joints,
            yaw: 0.0,
            yaw_rate: 0.0,
            ground_track: [0.0; 2],
            steps: 0,
            base_friction,
            contact_override: None,
        };
        env.reset_nominal(0.0)?;
        Ok(env)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn link_ids(&self) -> &[BodyId; NUM_LINKS] {
        &self.links
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn targets(&self) -> &[f64; NUM_JOINTS] {
        &self.targets
    }

    pub fn base_friction(&self) -> f64 {
        self.base_friction
    }

    /// Standing pose at torso x, at rest, feet on the ground.
    pub fn reset_nominal(&mut self, x: f64) -> Result<(), EnvError> {
        let angles = self.model.nominal_angles();
        let poses = self.model.link_poses(Vec2::new(x, self.model.nominal_height()), 0.0, &angles);
        self.rebuild()?;
        for (l, p) in poses.iter().enumerate() {
            let b = self.world.body_mut(self.links[l]);
            b.position = p.position;
            b.angle = p.angle;
            b.velocity = Vec2::ZERO;
            b.angular_velocity = 0.0;
        }
        self.targets = angles;
        self.yaw = 0.0;
        self.yaw_rate = 0.0;
        self.ground_track = [0.0; 2];
        self.steps = 0;
        self.contact_override = Some(([true; NUM_LEGS], false));
        Ok(())
    }

    /// Sets every link from a reference frame and zeroes the episode clock.
    pub fn reset_from_reference(&mut self, frame: &AgentState) -> Result<(), EnvError> {
        if !frame.is_valid_layout() {
            return Err(EnvError::FrameMismatch(format!(
                "expected {NUM_LINKS} links, found {}",
                frame.links.len()
            )));
        }
        self.rebuild()?;
        for l in 0..NUM_LINKS {
            let s = &frame.links[l];
            let b = self.world.body_mut(self.links[l]);
            b.position = Vec2::new(s.position[0], s.position[1]);
            b.angle = frame.link_angles[l];
            b.velocity = Vec2::new(s.velocity[0], s.velocity[1]);
            b.angular_velocity = s.angular_velocity[2];
        }
        self.targets = frame.joint_angles;
        self.model.clamp_targets(&mut self.targets);
        self.yaw = frame.yaw;
        self.yaw_rate = frame.yaw_rate;
        self.ground_track = frame.ground_track;
        self.steps = 0;
        self.contact_override = Some((frame.contacts, frame.non_foot_contact));
        Ok(())
    }

    fn rebuild(&mut self) -> Result<(), EnvError> {
        let mut wc = self.world_config.clone();
        if let Some(g) = wc.ground.as_mut() {
            g.friction = self.base_friction;
        }
        let (world, links, joints) = build_world(&self.model, &wc)?;
        self.world = world;
        self.links = links;
        self.joints = joints;
        Ok(())
    }

    pub fn observe(&self) -> AgentState {
        let bodies: Vec<&RigidBody> = self.links.iter().map(|&id| self.world.body(id)).collect();
        let links: Vec<LinkState> = bodies
            .iter()
            .map(|b| {
                LinkState::planar(b.position.x, b.position.y, b.angle, b.velocity.x, b.velocity.y, b.angular_velocity)
            })
            .collect();
        let link_angles: Vec<f64> = bodies.iter().map(|b| b.angle).collect();
        let joint_angles = std::array::from_fn(|j| self.world.joint_angle(self.joints[j]));
        let joint_velocities = std::array::from_fn(|j| self.world.joint_velocity(self.joints[j]));

        let total = self.model.total_mass();
        let com = bodies.iter().map(|b| b.position * b.mass).sum::<Vec2>() / total;
        let com_v = bodies.iter().map(|b| b.velocity * b.mass).sum::<Vec2>() / total;

        let (contacts, non_foot) = self.contact_override.unwrap_or_else(|| self.ground_contacts());
        let torso = bodies[0];
        let feet = std::array::from_fn(|leg| {
            let lower = bodies[lower_link(leg)];
            let foot = lower.to_world(Vec2::new(0.0, -self.model.lower_length / 2.0));
            let r = rotate(-torso.angle, foot - torso.position);
            [r.x, r.y]
        });
        AgentState {
            links,
            link_angles,
            joint_angles,
            joint_velocities,
            contacts,
            non_foot_contact: non_foot,
            yaw: self.yaw,
            yaw_rate: self.yaw_rate,
            com: [com.x, com.y, 0.0],
            com_velocity: [com_v.x, com_v.y, 0.0],
            heading_velocity: heading_velocity(com_v.x, self.yaw),
            ground_track: self.ground_track,
            feet,
        }
    }

    fn ground_contacts(&self) -> ([bool; NUM_LEGS], bool) {
        let mut feet = [false; NUM_LEGS];
        let mut other = false;
        for c in self.world.contacts() {
            if c.other.is_some() || !c.is_touching() {
                continue;
            }
            match self.links.iter().position(|&id| id == c.body) {
                Some(l) if l > 0 && l % 2 == 0 && c.feature == 1 => feet[(l - 2) / 2] = true,
                Some(_) => other = true,
                None => {}
            }
        }
        (feet, other)
    }

    /// Latches PD targets (clamped to limits) and integrates the yaw channel.
    pub fn apply_action(&mut self, action: &Action) -> Result<(), EnvError> {
        if let Some((index, &value)) = action
            .targets
            .iter()
            .chain(std::iter::once(&action.yaw_rate))
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(EnvError::NonFiniteAction { index, value });
        }
        self.targets = action.targets;
        self.model.clamp_targets(&mut self.targets);
        self.yaw_rate = action.yaw_rate.clamp(-self.config.max_yaw_rate, self.config.max_yaw_rate);
        self.yaw += self.yaw_rate * self.config.control_dt();
        Ok(())
    }

    /// Runs one control interval of physics substeps under the latched targets.
    pub fn simulate(&mut self) -> Result<(), EnvError> {
        let dt = self.world.dt();
        let total = self.model.total_mass();
        let mut torques = [0.0; NUM_JOINTS];
        for _ in 0..self.config.substeps {
            for (j, tau) in torques.iter_mut().enumerate() {
                let id = self.joints[j];
                *tau = pd_torque(
                    self.world.joint(id),
                    self.world.joint_angle(id),
                    self.world.joint_velocity(id),
                    self.targets[j],
                    0.0,
                );
            }
            self.world.step(&torques)?;
            let com_vx = self.links.iter().map(|&id| {
                let b = self.world.body(id);
                b.velocity.x * b.mass
            }).sum::<f64>() / total;
            let hv = heading_velocity(com_vx, self.yaw);
            self.ground_track[0] += hv[0] * dt;
            self.ground_track[1] += hv[1] * dt;
        }
        self.contact_override = None;
        Ok(())
    }

    pub fn step(&mut self, action: &Action) -> Result<StepInfo, EnvError> {
        self.apply_action(action)?;
        self.simulate()?;
        self.steps += 1;
        let state = self.observe();
        let terminated = check_termination(&state, &self.model, &self.config);
        Ok(StepInfo {
            terminated,
            truncated: !terminated && self.steps >= self.config.max_steps,
            state,
        })
    }

    /// Applies a perturbation; returns the spawned box, if any.
    pub fn perturb<R: Rng>(&mut self, kind: PerturbKind, rng: &mut R) -> Result<Option<BodyId>, EnvError> {
        match kind {
            PerturbKind::Slippery => {
                self.world.set_ground_friction(0.1 * self.base_friction)?;
                Ok(None)
            }
            PerturbKind::BoxThrow => {
                let size = rng.random_range(0.1..=0.3);
                let density = rng.random_range(50.0..=300.0);
                let speed = rng.random_range(2.0..=6.0);
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let torso = self.world.body(self.links[0]);
                let target = torso.position;
                let start = target + Vec2::new(side * 1.0, 0.2);
                let t = 1.0 / speed;
                let g = -self.world.config.gravity.y;
                let vel = Vec2::new(-side * speed, (-0.2 + 0.5 * g * t * t) / t);
                Ok(Some(self.world.spawn_box(Vec2::splat(size), density, start, vel)?))
            }
        }
    }
}

fn build_world(model: &QuadrupedModel, config: &WorldConfig) -> Result<(World, [BodyId; NUM_LINKS], [JointId; NUM_JOINTS]), EnvError> {
    let mut world = World::new(config.clone())?;
    let [w, h] = model.torso_size;
    let mut torso = RigidBody::new(
        model.torso_mass,
        model.torso_mass * (w * w + h * h) / 12.0,
        Shape::Box {
            half_extents: Vec2::new(w / 2.0, h / 2.0),
        },
    )?;
    torso.friction = model.friction;
    torso.collision_group = AGENT_GROUP;
    let mut links = [BodyId(0); NUM_LINKS];
    links[0] = world.add_body(torso);
    for leg in 0..NUM_LEGS {
        for (link, len, mass) in [
            (upper_link(leg), model.upper_length, model.upper_mass),
            (lower_link(leg), model.lower_length, model.lower_mass),
        ] {
            let mut b = RigidBody::rod(len, model.leg_radius, mass)?;
            b.friction = model.friction;
            b.collision_group = AGENT_GROUP;
            links[link] = world.add_body(b);
        }
    }
    let mut joints = [JointId(0); NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        let (lo, hi) = model.joint_limits(hip_joint(leg));
        joints[hip_joint(leg)] = world.add_joint(
            RevoluteJoint::new(
                Some(links[0]),
                links[upper_link(leg)],
                model.hip_local(leg),
                Vec2::new(0.0, model.upper_length / 2.0),
            )
            .with_limits(lo, hi)
            .with_gains(model.kp, model.kd_hip, model.max_torque),
        )?;
        let (lo, hi) = model.joint_limits(knee_joint(leg));
        joints[knee_joint(leg)] = world.add_joint(
            RevoluteJoint::new(
                Some(links[upper_link(leg)]),
                links[lower_link(leg)],
                Vec2::new(0.0, -model.upper_length / 2.0),
                Vec2::new(0.0, model.lower_length / 2.0),
            )
            .with_limits(lo, hi)
            .with_gains(model.kp, model.kd_knee, model.max_torque),
        )?;
    }
    Ok((world, links, joints))
}
