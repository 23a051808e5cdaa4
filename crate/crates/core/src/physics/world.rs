use super::collision::{self, Manifold};
use super::{cross, cross_sv, BodyId, JointId, PhysicsError, RevoluteJoint, RigidBody, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub height: f64,
    pub friction: f64,
}

impl Default for Ground {
    fn default() -> Self {
        Self {
            height: 0.0,
            friction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub gravity: Vec2,
    pub dt: f64,
    pub iterations: usize,
    pub baumgarte: f64,
    /// Penetration tolerated before positional correction kicks in.
    pub slop: f64,
    /// Contacts are generated for separations below this distance.
    pub speculative_margin: f64,
    pub ray_range: f64,
    pub ground: Option<Ground>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            gravity: Vec2::new(0.0, -9.81),
            dt: 1.0 / 1200.0,
            iterations: 10,
            baumgarte: 0.2,
            slop: 5e-4,
            speculative_margin: 0.02,
            ray_range: 10.0,
            ground: Some(Ground::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub body: BodyId,
    /// `None` for the ground plane.
    pub other: Option<BodyId>,
    /// Index of the collision vertex on `body`.
    pub feature: usize,
    pub point: Vec2,
    /// Unit normal pointing from `other` into `body`.
    pub normal: Vec2,
    pub separation: f64,
    pub normal_impulse: f64,
    pub tangent_impulse: f64,
    pub friction: f64,
}

impl ContactPoint {
    /// Carrying load, or geometrically touching.
    pub fn is_touching(&self) -> bool {
        self.normal_impulse > 0.0 || self.separation <= 0.0
    }
}

#[derive(Debug, Clone)]
struct ContactSolve {
    a: usize,
    b: Option<usize>,
    ra: Vec2,
    rb: Vec2,
    tangent: Vec2,
    normal_mass: f64,
    tangent_mass: f64,
    bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    bodies: Vec<RigidBody>,
    joints: Vec<RevoluteJoint>,
    contacts: Vec<ContactPoint>,
    pending: Vec<BodyId>,
    step_count: u64,
}

struct Velocities {
    v: Vec<Vec2>,
    w: Vec<f64>,
    im: Vec<f64>,
    ii: Vec<f64>,
}

impl Velocities {
    fn apply(&mut self, i: usize, r: Vec2, p: Vec2) {
        self.v[i] += p * self.im[i];
        self.w[i] += cross(r, p) * self.ii[i];
    }

    fn point(&self, i: usize, r: Vec2) -> Vec2 {
        self.v[i] + cross_sv(self.w[i], r)
    }
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, PhysicsError> {
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(PhysicsError::InvalidParameter(format!("dt must be > 0, got {}", config.dt)));
        }
        if config.iterations == 0 {
            return Err(PhysicsError::InvalidParameter("iterations must be >= 1".into()));
        }
        if let Some(g) = config.ground {
            if !(g.friction >= 0.0) {
                return Err(PhysicsError::InvalidParameter("ground friction must be >= 0".into()));
            }
        }
        Ok(Self {
            config,
            bodies: Vec::new(),
            joints: Vec::new(),
            contacts: Vec::new(),
            pending: Vec::new(),
            step_count: 0,
        })
    }

    pub fn add_body(&mut self, body: RigidBody) -> BodyId {
        self.bodies.push(body);
        BodyId(self.bodies.len() - 1)
    }

    pub fn add_joint(&mut self, joint: RevoluteJoint) -> Result<JointId, PhysicsError> {
        let ok = |id: BodyId| id.0 < self.bodies.len();
        if !ok(joint.child) || joint.parent.is_some_and(|p| !ok(p)) {
            return Err(PhysicsError::InvalidBody("joint references unknown body".into()));
        }
        self.joints.push(joint);
        Ok(JointId(self.joints.len() - 1))
    }

    pub fn bodies(&self) -> &[RigidBody] {
        &self.bodies
    }

    pub fn body(&self, id: BodyId) -> &RigidBody {
        &self.bodies[id.0]
    }

    pub fn body_mut(&mut self, id: BodyId) -> &mut RigidBody {
        &mut self.bodies[id.0]
    }

    pub fn joints(&self) -> &[RevoluteJoint] {
        &self.joints
    }

    pub fn joint(&self, id: JointId) -> &RevoluteJoint {
        &self.joints[id.0]
    }

    pub fn contacts(&self) -> &[ContactPoint] {
        &self.contacts
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    fn parent_angle(&self, j: &RevoluteJoint) -> f64 {
        j.parent.map_or(0.0, |p| self.bodies[p.0].angle)
    }

    pub fn joint_angle(&self, id: JointId) -> f64 {
        let j = &self.joints[id.0];
        self.bodies[j.child.0].angle - self.parent_angle(j)
    }

    pub fn joint_velocity(&self, id: JointId) -> f64 {
        let j = &self.joints[id.0];
        let wp = j.parent.map_or(0.0, |p| self.bodies[p.0].angular_velocity);
        self.bodies[j.child.0].angular_velocity - wp
    }

    /// World positions of the parent and child anchors.
    pub fn joint_anchors(&self, id: JointId) -> (Vec2, Vec2) {
        let j = &self.joints[id.0];
        let pa = match j.parent {
            Some(p) => self.bodies[p.0].to_world(j.parent_anchor),
            None => j.parent_anchor,
        };
        (pa, self.bodies[j.child.0].to_world(j.child_anchor))
    }

    pub fn max_joint_separation(&self) -> f64 {
        (0..self.joints.len())
            .map(|i| {
                let (a, b) = self.joint_anchors(JointId(i));
                a.distance(b)
            })
            .fold(0.0, f64::max)
    }

    pub fn set_ground_friction(&mut self, mu: f64) -> Result<(), PhysicsError> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(PhysicsError::InvalidParameter(format!("friction must be >= 0, got {mu}")));
        }
        if let Some(g) = self.config.ground.as_mut() {
            g.friction = mu;
        }
        Ok(())
    }

    /// Adds a box perturbation body. A box that overlaps an existing body is
    /// inserted inactive and joins the simulation at the start of the next step.
    pub fn spawn_box(
        &mut self,
        size: Vec2,
        density: f64,
        position: Vec2,
        velocity: Vec2,
    ) -> Result<BodyId, PhysicsError> {
        let mut b = RigidBody::solid_box(size.x, size.y, density)?.with_pose(position, 0.0);
        b.velocity = velocity;
        b.active = !self
            .bodies
            .iter()
            .any(|o| o.active && collision::overlaps(&b, o));
        let deferred = !b.active;
        let id = self.add_body(b);
        if deferred {
            self.pending.push(id);
        }
        Ok(id)
    }

    /// Removes a body from simulation while keeping its id reserved.
    pub fn deactivate(&mut self, id: BodyId) {
        self.pending.retain(|p| *p != id);
        self.bodies[id.0].active = false;
    }

    pub fn total_energy(&self) -> f64 {
        self.live()
            .map(|b| b.kinetic_energy() - b.mass * self.config.gravity.dot(b.position))
            .sum()
    }

    pub fn linear_momentum(&self) -> Vec2 {
        self.live().map(|b| b.velocity * b.mass).sum()
    }

    /// Angular momentum about the world origin.
    pub fn angular_momentum(&self) -> f64 {
        self.live()
            .map(|b| b.mass * cross(b.position, b.velocity) + b.inertia * b.angular_velocity)
            .sum()
    }

    fn live(&self) -> impl Iterator<Item = &RigidBody> {
        self.bodies.iter().filter(|b| b.active && !b.fixed)
    }

    fn dynamic(&self, i: usize) -> bool {
        self.bodies[i].active && !self.bodies[i].fixed
    }

    /// Advances one `dt`. `torques[j]` acts on joint `j`'s child, with the
    /// reaction on its parent; values are clamped to the joint's limit.
    pub fn step(&mut self, torques: &[f64]) -> Result<(), PhysicsError> {
        if torques.len() != self.joints.len() {
            return Err(PhysicsError::TorqueCount {
                expected: self.joints.len(),
                found: torques.len(),
            });
        }
        let dt = self.config.dt;
        let inv_dt = 1.0 / dt;
        for id in std::mem::take(&mut self.pending) {
            self.bodies[id.0].active = true;
        }

        let n = self.bodies.len();
        let mut vel = Velocities {
            v: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            im: Vec::with_capacity(n),
            ii: Vec::with_capacity(n),
        };
        for (i, b) in self.bodies.iter().enumerate() {
            let dynamic = self.dynamic(i);
            vel.v.push(if dynamic { b.velocity + self.config.gravity * dt } else { Vec2::ZERO });
            vel.w.push(if dynamic { b.angular_velocity } else { 0.0 });
            vel.im.push(if dynamic { b.inv_mass() } else { 0.0 });
            vel.ii.push(if dynamic { b.inv_inertia() } else { 0.0 });
        }
        for (j, &t) in self.joints.iter().zip(torques) {
            if !t.is_finite() {
                return Err(PhysicsError::InvalidParameter("torque is not finite".into()));
            }
            let tau = t.clamp(-j.max_torque, j.max_torque) * dt;
            vel.w[j.child.0] += tau * vel.ii[j.child.0];
            if let Some(p) = j.parent {
                vel.w[p.0] -= tau * vel.ii[p.0];
            }
        }

        let (mut contacts, solves) = self.build_contacts(&vel, inv_dt);
        self.warm_start(&mut contacts, &solves, &mut vel);

        let beta = self.config.baumgarte;
        let joint_geom: Vec<(usize, Option<usize>, Vec2, Vec2, Vec2)> = self
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let (pa, pb) = self.joint_anchors(JointId(i));
                let mid = (pa + pb) * 0.5;
                let ra = j.parent.map_or(Vec2::ZERO, |p| mid - self.bodies[p.0].position);
                let rb = mid - self.bodies[j.child.0].position;
                (j.child.0, j.parent.map(|p| p.0), ra, rb, (pb - pa) * (beta * inv_dt))
            })
            .collect();
        let limit_bias: Vec<Option<(f64, f64)>> = (0..self.joints.len())
            .map(|i| {
                self.joints[i].limits.map(|(lo, hi)| {
                    let a = self.joint_angle(JointId(i));
                    let bias = |c: f64| if c > 0.0 { -c * inv_dt } else { -beta * c * inv_dt };
                    (bias(a - lo), bias(hi - a))
                })
            })
            .collect();

        for j in 0..self.joints.len() {
            let (b, a, ra, rb, _) = joint_geom[j];
            let p = self.joints[j].impulse;
            vel.apply(b, rb, p);
            if let Some(a) = a {
                vel.apply(a, ra, -p);
            }
            let l = self.joints[j].lower_impulse - self.joints[j].upper_impulse;
            vel.w[b] += l * vel.ii[b];
            if let Some(a) = a {
                vel.w[a] -= l * vel.ii[a];
            }
        }

        for _ in 0..self.config.iterations {
            for j in 0..self.joints.len() {
                let (b, a, ra, rb, bias) = joint_geom[j];
                if let Some((lo_bias, hi_bias)) = limit_bias[j] {
                    let wa = a.map_or(0.0, |a| vel.w[a]);
                    let ia = a.map_or(0.0, |a| vel.ii[a]);
                    let k = vel.ii[b] + ia;
                    if k > 0.0 {
                        let joint = &mut self.joints[j];
                        let rel = vel.w[b] - wa;
                        let old = joint.lower_impulse;
                        joint.lower_impulse = (old - (rel - lo_bias) / k).max(0.0);
                        let mut d = joint.lower_impulse - old;
                        let rel = rel + d * k;
                        let old = joint.upper_impulse;
                        joint.upper_impulse = (old - (-rel - hi_bias) / k).max(0.0);
                        d -= joint.upper_impulse - old;
                        vel.w[b] += d * vel.ii[b];
                        if let Some(a) = a {
                            vel.w[a] -= d * vel.ii[a];
                        }
                    }
                }

                let ma = a.map_or(0.0, |a| vel.im[a]);
                let ia = a.map_or(0.0, |a| vel.ii[a]);
                let (mb, ib) = (vel.im[b], vel.ii[b]);
                let k11 = ma + mb + ia * ra.y * ra.y + ib * rb.y * rb.y;
                let k12 = -ia * ra.x * ra.y - ib * rb.x * rb.y;
                let k22 = ma + mb + ia * ra.x * ra.x + ib * rb.x * rb.x;
                let det = k11 * k22 - k12 * k12;
                if det <= 0.0 {
                    continue;
                }
                let va = a.map_or(Vec2::ZERO, |a| vel.point(a, ra));
                let cdot = vel.point(b, rb) - va + bias;
                let lambda = Vec2::new(
                    -(k22 * cdot.x - k12 * cdot.y) / det,
                    -(k11 * cdot.y - k12 * cdot.x) / det,
                );
                self.joints[j].impulse += lambda;
                vel.apply(b, rb, lambda);
                if let Some(a) = a {
                    vel.apply(a, ra, -lambda);
                }
            }

            for (c, s) in contacts.iter_mut().zip(&solves) {
                let rel = |vel: &Velocities| {
                    let vb = s.b.map_or(Vec2::ZERO, |b| vel.point(b, s.rb));
                    vel.point(s.a, s.ra) - vb
                };
                let vn = rel(&vel).dot(c.normal);
                let old = c.normal_impulse;
                c.normal_impulse = (old - (vn - s.bias) * s.normal_mass).max(0.0);
                let p = c.normal * (c.normal_impulse - old);
                vel.apply(s.a, s.ra, p);
                if let Some(b) = s.b {
                    vel.apply(b, s.rb, -p);
                }

                let vt = rel(&vel).dot(s.tangent);
                let max_f = c.friction * c.normal_impulse;
                let old = c.tangent_impulse;
                c.tangent_impulse = (old - vt * s.tangent_mass).clamp(-max_f, max_f);
                let p = s.tangent * (c.tangent_impulse - old);
                vel.apply(s.a, s.ra, p);
                if let Some(b) = s.b {
                    vel.apply(b, s.rb, -p);
                }
            }
        }

        for (i, b) in self.bodies.iter_mut().enumerate() {
            if !(b.active && !b.fixed) {
                continue;
            }
            b.velocity = vel.v[i];
            b.angular_velocity = vel.w[i];
            b.position += b.velocity * dt;
            b.angle += b.angular_velocity * dt;
        }
        self.contacts = contacts;
        self.step_count += 1;

        let finite = self.bodies.iter().all(|b| {
            b.position.is_finite() && b.velocity.is_finite() && b.angle.is_finite() && b.angular_velocity.is_finite()
        });
        if !finite {
            return Err(PhysicsError::Diverged {
                step: self.step_count,
            });
        }
        Ok(())
    }

    fn build_contacts(&self, vel: &Velocities, inv_dt: f64) -> (Vec<ContactPoint>, Vec<ContactSolve>) {
        let margin = self.config.speculative_margin;
        let mut contacts = Vec::new();
        let mut solves = Vec::new();
        let mut push = |a: usize, b: Option<usize>, mu: f64, m: Manifold| {
            let ra = m.point - self.bodies[a].position;
            let rb = b.map_or(Vec2::ZERO, |b| m.point - self.bodies[b].position);
            let tangent = Vec2::new(m.normal.y, -m.normal.x);
            let eff = |dir: Vec2| {
                let mut k = vel.im[a] + vel.ii[a] * cross(ra, dir).powi(2);
                if let Some(b) = b {
                    k += vel.im[b] + vel.ii[b] * cross(rb, dir).powi(2);
                }
                if k > 0.0 {
                    1.0 / k
                } else {
                    0.0
                }
            };
            let bias = if m.separation > 0.0 {
                -m.separation * inv_dt
            } else {
                self.config.baumgarte * inv_dt * (-m.separation - self.config.slop).max(0.0)
            };
            solves.push(ContactSolve {
                a,
                b,
                ra,
                rb,
                tangent,
                normal_mass: eff(m.normal),
                tangent_mass: eff(tangent),
                bias,
            });
            contacts.push(ContactPoint {
                body: BodyId(a),
                other: b.map(BodyId),
                feature: m.feature,
                point: m.point,
                normal: m.normal,
                separation: m.separation,
                normal_impulse: 0.0,
                tangent_impulse: 0.0,
                friction: mu,
            });
        };

        if let Some(g) = self.config.ground {
            for i in 0..self.bodies.len() {
                if self.dynamic(i) {
                    for m in collision::against_ground(&self.bodies[i], g.height, margin) {
                        push(i, None, g.friction, m);
                    }
                }
            }
        }
        for i in 0..self.bodies.len() {
            for j in (i + 1)..self.bodies.len() {
                let (a, b) = (&self.bodies[i], &self.bodies[j]);
                if !(a.active && b.active) || (a.fixed && b.fixed) {
                    continue;
                }
                if a.collision_group != 0 && a.collision_group == b.collision_group {
                    continue;
                }
                let linked = self.joints.iter().any(|jt| {
                    let p = jt.parent.map(|p| p.0);
                    (jt.child.0 == i && p == Some(j)) || (jt.child.0 == j && p == Some(i))
                });
                if linked {
                    continue;
                }
                let reach = a.shape.bounding_radius() + b.shape.bounding_radius() + margin;
                if a.position.distance_squared(b.position) > reach * reach {
                    continue;
                }
                let mu = (a.friction * b.friction).sqrt();
                for m in collision::vertices_against(a, b, margin) {
                    push(i, Some(j), mu, m);
                }
                for m in collision::vertices_against(b, a, margin) {
                    push(j, Some(i), mu, m);
                }
            }
        }
        (contacts, solves)
    }

    fn warm_start(&self, contacts: &mut [ContactPoint], solves: &[ContactSolve], vel: &mut Velocities) {
        for (c, s) in contacts.iter_mut().zip(solves) {
            let Some(prev) = self
                .contacts
                .iter()
                .find(|p| p.body == c.body && p.other == c.other && p.feature == c.feature)
            else {
                continue;
            };
            c.normal_impulse = prev.normal_impulse;
            let max_f = c.friction * c.normal_impulse;
            c.tangent_impulse = prev.tangent_impulse.clamp(-max_f, max_f);
            let p = c.normal * c.normal_impulse + s.tangent * c.tangent_impulse;
            vel.apply(s.a, s.ra, p);
            if let Some(b) = s.b {
                vel.apply(b, s.rb, -p);
            }
        }
    }

    /// Clears solver warm-start caches (after teleporting bodies).
    pub fn reset_solver_cache(&mut self) {
        self.contacts.clear();
        for j in &mut self.joints {
            j.reset_warm_start();
        }
    }
}
