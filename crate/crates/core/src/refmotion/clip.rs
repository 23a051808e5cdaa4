use super::gait::{GaitName, GaitTable};
use super::ik::two_link_ik;
use super::RefError;
use crate::env::model::{hip_joint, knee_joint, QuadrupedModel, NUM_JOINTS, NUM_LEGS, NUM_LINKS};
use crate::env::{heading_velocity, AgentState, LinkPose, LinkState};
use crate::physics::{rotate, wrap_angle, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const FRAME_RATE: u32 = 30;
const FINE_HZ: f64 = 1200.0;
/// Gait phase starts at zero this many seconds before the first frame.
pub const PRE_ROLL: f64 = 3.0;

/// High-level directive `c_high = (σ, Δθ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub speed: f64,
    pub heading_delta: f64,
}

impl Command {
    pub fn new(speed: f64, heading_delta: f64) -> Self {
        Self { speed, heading_delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Speed,
    Heading,
}

impl ClipKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClipKind::Speed => "speed",
            ClipKind::Heading => "heading",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub time: f64,
    pub state: AgentState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClip {
    pub kind: ClipKind,
    pub gait_table_hash: String,
    pub frames: Vec<ReferenceFrame>,
    pub commands: Vec<Command>,
}

impl ReferenceClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn state(&self, i: usize) -> &AgentState {
        &self.frames[i].state
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / FRAME_RATE as f64
    }
}

/// `σ = ‖Δ ground track‖·30` and `Δθ = wrap(Δψ)·30·horizon` between frames `i` and `i+1`.
pub fn derive_high_level(clip: &ReferenceClip, i: usize) -> Result<Command, RefError> {
    if i + 1 >= clip.frames.len() {
        return Err(RefError::FrameIndex { index: i, len: clip.frames.len() });
    }
    Ok(command_between(&clip.frames[i].state, &clip.frames[i + 1].state, 1.0))
}

pub(crate) fn command_between(a: &AgentState, b: &AgentState, horizon: f64) -> Command {
    let fr = FRAME_RATE as f64;
    let dx = b.ground_track[0] - a.ground_track[0];
    let dz = b.ground_track[1] - a.ground_track[1];
    Command {
        speed: (dx * dx + dz * dz).sqrt() * fr,
        heading_delta: wrap_angle(b.yaw - a.yaw) * fr * horizon,
    }
}

/// Piecewise-linear function of time through `(t, value)` knots, held constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub knots: Vec<(f64, f64)>,
}

impl Profile {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, RefError> {
        if knots.is_empty() {
            return Err(RefError::Profile("profile needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(RefError::Profile("knot times must increase strictly".into()));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(RefError::Profile("knots must be finite".into()));
        }
        Ok(Self { knots })
    }

    pub fn constant(v: f64) -> Self {
        Self { knots: vec![(0.0, v)] }
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1].1
    }

    /// Exact integral from 0 to `t` (negative for `t < 0`).
    pub fn integral(&self, t: f64) -> f64 {
        self.integral_from_start(t) - self.integral_from_start(0.0)
    }

    fn integral_from_start(&self, t: f64) -> f64 {
        let k = &self.knots;
        let start = k[0].0;
        if t <= start {
            return k[0].1 * (t - start);
        }
        let mut acc = 0.0;
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                let vt = v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                return acc + 0.5 * (v0 + vt) * (t - t0);
            }
            acc += 0.5 * (v0 + v1) * (t1 - t0);
        }
        let (tl, vl) = k[k.len() - 1];
        acc + vl * (t - tl)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.knots.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub angle: f64,
    pub direction: TurnDirection,
}

impl Turn {
    pub fn left(angle: f64) -> Self {
        Self { angle, direction: TurnDirection::Left }
    }

    pub fn right(angle: f64) -> Self {
        Self { angle, direction: TurnDirection::Right }
    }

    pub fn signed(&self) -> f64 {
        match self.direction {
            TurnDirection::Left => self.angle,
            TurnDirection::Right => -self.angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub gaits: GaitTable,
    /// Longest hip-to-foot distance the generator will ask of a leg.
    pub max_reach: f64,
    /// Blend time for phase offsets and duty factor across a gait change.
    pub transition_time: f64,
    pub turn_rate: f64,
    pub heading_speed: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gaits: GaitTable::default(),
            max_reach: 0.48,
            transition_time: 0.5,
            turn_rate: 0.5 * PI,
            heading_speed: 1.0,
        }
    }
}

struct FineSchedule {
    t0: f64,
    contact: Vec<[bool; NUM_LEGS]>,
    /// Per leg: index of the interval containing each fine step.
    interval: Vec<[usize; NUM_LEGS]>,
    legs: [Vec<Interval>; NUM_LEGS],
    /// `∫σ` at each fine step.
    travel: Vec<f64>,
    hip_x: [f64; NUM_LEGS],
    /// Hip height above the foot plane.
    depth: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    start: usize,
    end: usize,
    stance: bool,
    /// World x of the foot for stance intervals.
    foothold: f64,
}

fn lerp_offsets(a: &[f64; NUM_LEGS], b: &[f64; NUM_LEGS], s: f64) -> [f64; NUM_LEGS] {
    std::array::from_fn(|e| {
        let mut d = (b[e] - a[e]).rem_euclid(1.0);
        if d > 0.5 {
            d -= 1.0;
        }
        (a[e] + s * d).rem_euclid(1.0)
    })
}

fn build_schedule(
    model: &QuadrupedModel,
    cfg: &SynthConfig,
    speed: &Profile,
    duration: f64,
) -> Result<FineSchedule, RefError> {
    let dt = 1.0 / FINE_HZ;
    let t0 = -PRE_ROLL;
    let steps = ((duration + 2.0 * PRE_ROLL) * FINE_HZ).round() as usize + 1;
    let mut contact = Vec::with_capacity(steps);
    let mut stride = Vec::with_capacity(steps);
    let mut phase = 0.0f64;

    let first = GaitName::for_speed(speed.value(t0))?;
    let mut gait = first;
    let (mut from, mut from_duty) = cfg.gaits.pattern(first);
    let (mut to, mut to_duty) = (from, from_duty);
    let mut blend_start = f64::NEG_INFINITY;

    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let sigma = speed.value(t);
        let name = GaitName::for_speed(sigma)?;
        let s_prev = ((t - blend_start) / cfg.transition_time).clamp(0.0, 1.0);
        if name != gait {
            // Restart the blend from wherever the previous one had reached.
            from = lerp_offsets(&from, &to, s_prev);
            from_duty += (to_duty - from_duty) * s_prev;
            let (o, d) = cfg.gaits.pattern(name);
            to = o;
            to_duty = d;
            blend_start = t;
            gait = name;
        }
        let s = ((t - blend_start) / cfg.transition_time).clamp(0.0, 1.0);
        let offsets = lerp_offsets(&from, &to, s);
        let duty = from_duty + (to_duty - from_duty) * s;
        let cycle = cfg.gaits.cycle_duration(sigma);
        contact.push(std::array::from_fn(|e| (phase + offsets[e]).rem_euclid(1.0) < duty));
        stride.push(sigma * cycle * duty);
        phase += dt / cycle;
    }

    let hip_est = |k: usize, leg: usize| speed.integral(t0 + k as f64 * dt) + model.hip_local(leg).x;
    let travel = |a: usize, b: usize| speed.integral(t0 + b as f64 * dt) - speed.integral(t0 + a as f64 * dt);
    let mut interval = vec![[0usize; NUM_LEGS]; steps];
    let legs: [Vec<Interval>; NUM_LEGS] = std::array::from_fn(|leg| {
        let mut out: Vec<Interval> = Vec::new();
        let mut start = 0;
        for k in 1..=steps {
            if k == steps || contact[k][leg] != contact[start][leg] {
                let stance = contact[start][leg];
                let foothold = if stance {
                    // Centre the stance under the hip over the distance travelled.
                    let d = if start == 0 || k == steps { stride[start] } else { travel(start, k) };
                    if start == 0 {
                        hip_est(k.min(steps - 1), leg) - d / 2.0
                    } else {
                        hip_est(start, leg) + d / 2.0
                    }
                } else {
                    f64::NAN
                };
                out.push(Interval { start, end: k, stance, foothold });
                start = k;
            }
        }
        for (i, iv) in out.iter().enumerate() {
            for row in interval.iter_mut().take(iv.end).skip(iv.start) {
                row[leg] = i;
            }
        }
        out
    });
    let travel = (0..steps).map(|k| speed.integral(t0 + k as f64 * dt)).collect();
    let hip_x = std::array::from_fn(|leg| model.hip_local(leg).x);
    let mut sched = FineSchedule { t0, contact, interval, legs, travel, hip_x, depth: Vec::new() };
    sched.depth = sched.depth_profile(model, cfg);
    Ok(sched)
}

impl FineSchedule {
    fn index(&self, t: f64) -> usize {
        (((t - self.t0) * FINE_HZ).round() as usize).min(self.contact.len() - 1)
    }

    /// Largest horizontal hip-to-foot offset near each step, max-filtered then
    /// box-averaged so the result bounds the raw value and varies smoothly.
    fn depth_profile(&self, model: &QuadrupedModel, cfg: &SynthConfig) -> Vec<f64> {
        let n = self.travel.len();
        let raw: Vec<f64> = (0..n)
            .map(|k| {
                (0..NUM_LEGS)
                    .map(|leg| (self.foot(leg, k, 0.0, 0.0).x - self.hip(leg, k)).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let w = (0.25 * FINE_HZ) as usize;
        let window = |k: usize| k.saturating_sub(w)..(k + w + 1).min(n);
        let peak: Vec<f64> = (0..n).map(|k| raw[window(k)].iter().copied().fold(0.0, f64::max)).collect();
        (0..n)
            .map(|k| {
                let r = window(k);
                let m = peak[r.clone()].iter().sum::<f64>() / r.len() as f64;
                model.nominal_depth.min((cfg.max_reach * cfg.max_reach - m * m).max(0.0).sqrt())
            })
            .collect()
    }

    fn hip(&self, leg: usize, k: usize) -> f64 {
        self.travel[k] + self.hip_x[leg]
    }

    /// World foot point of `leg` at fine step `k`. Swing follows a cycloid
    /// relative to the hip between the neighbouring footholds.
    fn foot(&self, leg: usize, k: usize, ground: f64, swing_height: f64) -> Vec2 {
        let ivs = &self.legs[leg];
        let i = self.interval[k][leg];
        let iv = ivs[i];
        if iv.stance {
            return Vec2::new(iv.foothold, ground);
        }
        let r0 = if i > 0 { ivs[i - 1].foothold - self.hip(leg, iv.start) } else { 0.0 };
        let r1 = if i + 1 < ivs.len() { ivs[i + 1].foothold - self.hip(leg, iv.end.min(self.travel.len() - 1)) } else { 0.0 };
        let len = (iv.end - iv.start) as f64;
        let u = (k - iv.start) as f64 / len;
        let h = swing_height * (len / FINE_HZ / 0.15).min(1.0);
        let c = u - (2.0 * PI * u).sin() / (2.0 * PI);
        Vec2::new(
            self.hip(leg, k) + r0 + (r1 - r0) * c,
            ground + h * 0.5 * (1.0 - (2.0 * PI * u).cos()),
        )
    }
}

struct Pose {
    links: [LinkPose; NUM_LINKS],
    joints: [f64; NUM_JOINTS],
    com: Vec2,
    contacts: [bool; NUM_LEGS],
    feet: [Vec2; NUM_LEGS],
    yaw: f64,
}

fn pose_at(
    model: &QuadrupedModel,
    cfg: &SynthConfig,
    sched: &FineSchedule,
    speed: &Profile,
    yaw: &Profile,
    t: f64,
    frame: i64,
) -> Result<Pose, RefError> {
    let k = sched.index(t);
    let ground = model.leg_radius;
    let depth = sched.depth[k];
    let torso_y = depth + ground - model.hip_y;
    let com_target = speed.integral(t);

    let mut torso_x = com_target;
    let mut joints = [0.0; NUM_JOINTS];
    let mut feet = [Vec2::ZERO; NUM_LEGS];
    let mut links = model.link_poses(Vec2::new(torso_x, torso_y), 0.0, &joints);
    let mut com = Vec2::ZERO;
    for _ in 0..60 {
        for leg in 0..NUM_LEGS {
            let hip = Vec2::new(torso_x, torso_y) + model.hip_local(leg);
            let foot = sched.foot(leg, k, ground, cfg.gaits.swing_height);
            let (h, kn) = two_link_ik(hip, foot, model.upper_length, model.lower_length).map_err(|e| match e {
                RefError::Unreachable { deficit } => RefError::IkFailed { leg, frame, deficit },
                other => other,
            })?;
            joints[hip_joint(leg)] = h;
            joints[knee_joint(leg)] = kn;
            feet[leg] = foot;
        }
        links = model.link_poses(Vec2::new(torso_x, torso_y), 0.0, &joints);
        com = model.com(&links);
        let err = com_target - com.x;
        torso_x += err;
        if err.abs() < 1e-13 {
            break;
        }
    }
    Ok(Pose {
        links,
        joints,
        com,
        contacts: sched.contact[k],
        feet,
        yaw: yaw.value(t),
    })
}

fn assemble(poses: &[Pose], kind: ClipKind, hash: String) -> ReferenceClip {
    // poses[j] is frame j-1; frame i uses its neighbours for central differences.
    let n = poses.len() - 2;
    let fr = FRAME_RATE as f64;
    let half = fr / 2.0;
    let mut track = [0.0f64; 2];
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let (prev, cur, next) = (&poses[i], &poses[i + 1], &poses[i + 2]);
        if i > 0 {
            let before = &poses[i];
            let dx = cur.com.x - before.com.x;
            let mid = 0.5 * (cur.yaw + before.yaw);
            track[0] += dx * mid.cos();
            track[1] -= dx * mid.sin();
        }
        let links: Vec<LinkState> = (0..NUM_LINKS)
            .map(|l| {
                let v = (next.links[l].position - prev.links[l].position) * half;
                let w = (next.links[l].angle - prev.links[l].angle) * half;
                let p = cur.links[l].position;
                LinkState::planar(p.x, p.y, cur.links[l].angle, v.x, v.y, w)
            })
            .collect();
        let com_v = (next.com - prev.com) * half;
        let torso = cur.links[0];
        let state = AgentState {
            links,
            link_angles: cur.links.iter().map(|l| l.angle).collect(),
            joint_angles: cur.joints,
            joint_velocities: std::array::from_fn(|j| (next.joints[j] - prev.joints[j]) * half),
            contacts: cur.contacts,
            non_foot_contact: false,
            yaw: cur.yaw,
            yaw_rate: (next.yaw - prev.yaw) * half,
            com: [cur.com.x, cur.com.y, 0.0],
            com_velocity: [com_v.x, com_v.y, 0.0],
            heading_velocity: heading_velocity(com_v.x, cur.yaw),
            ground_track: track,
            feet: cur.feet.map(|f| {
                let r = rotate(-torso.angle, f - torso.position);
                [r.x, r.y]
            }),
        };
        frames.push(ReferenceFrame {
            time: i as f64 / fr,
            state,
        });
    }
    let mut clip = ReferenceClip {
        kind,
        gait_table_hash: hash,
        frames,
        commands: Vec::new(),
    };
    clip.commands = (0..n)
        .map(|i| {
            let j = if i + 1 < n { i } else { i.saturating_sub(1) };
            if n < 2 {
                Command::default()
            } else {
                command_between(&clip.frames[j].state, &clip.frames[j + 1].state, 1.0)
            }
        })
        .collect();
    clip
}

fn synthesize(
    model: &QuadrupedModel,
    cfg: &SynthConfig,
    speed: &Profile,
    yaw: &Profile,
    duration: f64,
    kind: ClipKind,
) -> Result<ReferenceClip, RefError> {
    let (lo, hi) = speed.min_max();
    if lo < 0.0 || hi > 4.0 {
        return Err(RefError::SpeedOutOfRange(if lo < 0.0 { lo } else { hi }));
    }
    let n = (duration * FRAME_RATE as f64).round() as i64;
    if n < 2 {
        return Err(RefError::Profile(format!("duration {duration} s gives fewer than 2 frames")));
    }
    let sched = build_schedule(model, cfg, speed, duration)?;
    let poses = (-1..=n)
        .map(|i| pose_at(model, cfg, &sched, speed, yaw, i as f64 / FRAME_RATE as f64, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(&poses, kind, cfg.gaits.hash()))
}

/// Straight-line locomotion following a speed profile.
pub fn synthesize_speed_clip(
    model: &QuadrupedModel,
    cfg: &SynthConfig,
    profile: &Profile,
    duration: f64,
) -> Result<ReferenceClip, RefError> {
    synthesize(model, cfg, profile, &Profile::constant(0.0), duration, ClipKind::Speed)
}

/// Yaw profile for a turn list: each turn is centred in an equal time slot
/// and executed at the configured turn rate.
pub fn heading_profile(turns: &[Turn], duration: f64, turn_rate: f64) -> Result<Profile, RefError> {
    if turns.is_empty() {
        return Ok(Profile::constant(0.0));
    }
    let slot = duration / turns.len() as f64;
    let mut knots = vec![(0.0, 0.0)];
    let mut yaw = 0.0;
    for (i, turn) in turns.iter().enumerate() {
        if !(0.0..=PI).contains(&turn.angle) {
            return Err(RefError::Profile(format!("turn angle {} outside [0, π]", turn.angle)));
        }
        let tau = turn.angle / turn_rate;
        if tau > slot {
            return Err(RefError::Profile(format!(
                "turn {i} needs {tau:.3} s but its slot is {slot:.3} s"
            )));
        }
        if tau == 0.0 {
            continue;
        }
        let start = i as f64 * slot + (slot - tau) / 2.0;
        if start > knots[knots.len() - 1].0 {
            knots.push((start, yaw));
        }
        yaw += turn.signed();
        knots.push((start + tau, yaw));
    }
    Profile::new(knots)
}

/// Pace at the heading speed while the yaw follows constant-rate turns.
pub fn synthesize_heading_clip(
    model: &QuadrupedModel,
    cfg: &SynthConfig,
    turns: &[Turn],
    duration: f64,
) -> Result<ReferenceClip, RefError> {
    let yaw = heading_profile(turns, duration, cfg.turn_rate)?;
    synthesize(model, cfg, &Profile::constant(cfg.heading_speed), &yaw, duration, ClipKind::Heading)
}

/// One minute spanning every speed band in `[0, 4]` m/s.
pub fn default_speed_profile() -> Profile {
    Profile::new(vec![
        (0.0, 0.0),
        (3.0, 0.8),
        (9.0, 1.5),
        (15.0, 2.4),
        (21.0, 3.0),
        (27.0, 3.7),
        (33.0, 4.0),
        (39.0, 3.2),
        (45.0, 2.2),
        (51.0, 1.2),
        (57.0, 0.5),
        (60.0, 0.5),
    ])
    .expect("static knots are valid")
}

/// One minute of pace with speed varying inside (0, 2) m/s.
pub fn pace_speed_profile() -> Profile {
    Profile::new(vec![
        (0.0, 0.6),
        (8.0, 1.4),
        (16.0, 0.9),
        (24.0, 1.8),
        (32.0, 1.1),
        (40.0, 1.6),
        (48.0, 0.7),
        (56.0, 1.2),
        (60.0, 1.0),
    ])
    .expect("static knots are valid")
}

/// Left and right turns across `[0, π]`.
pub fn default_turns() -> Vec<Turn> {
    vec![
        Turn::left(0.5 * PI),
        Turn::right(PI),
        Turn::left(0.25 * PI),
        Turn::right(0.75 * PI),
        Turn::left(PI),
        Turn::right(0.5 * PI),
        Turn::left(0.75 * PI),
        Turn::right(0.25 * PI),
    ]
}
