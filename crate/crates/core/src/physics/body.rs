use super::{rotate, PhysicsError, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BodyId(pub usize);

/// Collision geometry in body-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Segment from `(0, -half_length)` to `(0, half_length)` swept by `radius`.
    Capsule { half_length: f64, radius: f64 },
    Box { half_extents: Vec2 },
}

impl Shape {
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Capsule {
                half_length,
                radius,
            } => half_length + radius,
            Shape::Box { half_extents } => half_extents.length(),
        }
    }

    /// Collision vertices in local coordinates and the radius around them.
    pub(crate) fn vertices(&self) -> (Vec<Vec2>, f64) {
        match *self {
            Shape::Capsule {
                half_length,
                radius,
            } => (
                vec![Vec2::new(0.0, half_length), Vec2::new(0.0, -half_length)],
                radius,
            ),
            Shape::Box { half_extents: h } => (
                vec![
                    Vec2::new(h.x, h.y),
                    Vec2::new(-h.x, h.y),
                    Vec2::new(-h.x, -h.y),
                    Vec2::new(h.x, -h.y),
                ],
                0.0,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub mass: f64,
    pub inertia: f64,
    pub position: Vec2,
    pub angle: f64,
    pub velocity: Vec2,
    pub angular_velocity: f64,
    pub shape: Shape,
    pub friction: f64,
    /// Bodies sharing a non-zero group never collide with each other.
    pub collision_group: u32,
    /// Static bodies have infinite mass and are never integrated.
    pub fixed: bool,
    pub(crate) active: bool,
}

impl RigidBody {
    pub fn new(mass: f64, inertia: f64, shape: Shape) -> Result<Self, PhysicsError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(PhysicsError::InvalidBody(format!("mass must be > 0, got {mass}")));
        }
        if !(inertia > 0.0 && inertia.is_finite()) {
            return Err(PhysicsError::InvalidBody(format!(
                "inertia must be > 0, got {inertia}"
            )));
        }
        Ok(Self {
            mass,
            inertia,
            position: Vec2::ZERO,
            angle: 0.0,
            velocity: Vec2::ZERO,
            angular_velocity: 0.0,
            shape,
            friction: 0.8,
            collision_group: 0,
            fixed: false,
            active: true,
        })
    }

    /// Uniform-density box.
    pub fn solid_box(width: f64, height: f64, density: f64) -> Result<Self, PhysicsError> {
        if !(width > 0.0 && height > 0.0 && density > 0.0) {
            return Err(PhysicsError::InvalidBody(
                "box size and density must be > 0".into(),
            ));
        }
        let mass = density * width * height;
        let inertia = mass * (width * width + height * height) / 12.0;
        Self::new(
            mass,
            inertia,
            Shape::Box {
                half_extents: Vec2::new(width / 2.0, height / 2.0),
            },
        )
    }

    /// Capsule treated as a thin rod of length `length` for inertia.
    pub fn rod(length: f64, radius: f64, mass: f64) -> Result<Self, PhysicsError> {
        let inertia = mass * (length * length + 3.0 * radius * radius) / 12.0;
        Self::new(
            mass,
            inertia,
            Shape::Capsule {
                half_length: length / 2.0,
                radius,
            },
        )
    }

    pub fn with_pose(mut self, position: Vec2, angle: f64) -> Self {
        self.position = position;
        self.angle = angle;
        self
    }

    /// Immovable obstacle with the given shape.
    pub fn fixed(shape: Shape) -> Self {
        let mut b = Self::new(1.0, 1.0, shape).expect("unit mass is valid");
        b.fixed = true;
        b
    }

    pub fn inv_mass(&self) -> f64 {
        if self.fixed {
            0.0
        } else {
            1.0 / self.mass
        }
    }

    pub fn inv_inertia(&self) -> f64 {
        if self.fixed {
            0.0
        } else {
            1.0 / self.inertia
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.position + rotate(self.angle, local)
    }

    pub fn to_local(&self, world: Vec2) -> Vec2 {
        rotate(-self.angle, world - self.position)
    }

    /// Velocity of the material point at world position `p`.
    pub fn point_velocity(&self, p: Vec2) -> Vec2 {
        let r = p - self.position;
        self.velocity + Vec2::new(-self.angular_velocity * r.y, self.angular_velocity * r.x)
    }

    /// Orientation as a unit quaternion `[w, x, y, z]` about the out-of-plane axis.
    pub fn quaternion(&self) -> [f64; 4] {
        let (s, c) = (self.angle / 2.0).sin_cos();
        [c, 0.0, 0.0, s]
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocity.length_squared()
            + 0.5 * self.inertia * self.angular_velocity * self.angular_velocity
    }
}
