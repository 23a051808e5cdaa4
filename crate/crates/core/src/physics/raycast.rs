use super::{BodyId, RigidBody, Shape, Vec2, World};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    /// `None` when the ground plane is hit.
    pub body: Option<BodyId>,
    pub point: Vec2,
}

fn ray_circle(o: Vec2, d: Vec2, c: Vec2, r: f64) -> Option<f64> {
    let m = o - c;
    let b = m.dot(d);
    let cc = m.length_squared() - r * r;
    if cc <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - cc;
    if disc < 0.0 || b > 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

/// Slab test against an axis-aligned box centred at the origin.
fn ray_aabb(o: Vec2, d: Vec2, h: Vec2) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for (oi, di, hi) in [(o.x, d.x, h.x), (o.y, d.y, h.y)] {
        if di.abs() < 1e-15 {
            if oi.abs() > hi {
                return None;
            }
        } else {
            let a = (-hi - oi) / di;
            let b = (hi - oi) / di;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(t0)
}

fn ray_body(body: &RigidBody, origin: Vec2, dir: Vec2) -> Option<f64> {
    let o = body.to_local(origin);
    let d = super::rotate(-body.angle, dir);
    match body.shape {
        Shape::Box { half_extents } => ray_aabb(o, d, half_extents),
        Shape::Capsule {
            half_length,
            radius,
        } => {
            let caps = [Vec2::new(0.0, half_length), Vec2::new(0.0, -half_length)]
                .into_iter()
                .filter_map(|c| ray_circle(o, d, c, radius));
            let core = ray_aabb(o, d, Vec2::new(radius, half_length));
            caps.chain(core).fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
        }
    }
}

impl World {
    /// Nearest hit within the configured range.
    pub fn raycast(&self, origin: Vec2, direction: Vec2) -> Option<RayHit> {
        self.raycast_filtered(origin, direction, self.config.ray_range, |_| true)
    }

    /// Nearest hit within `max_range` among the ground and bodies accepted by `include`.
    pub fn raycast_filtered<F>(&self, origin: Vec2, direction: Vec2, max_range: f64, include: F) -> Option<RayHit>
    where
        F: Fn(BodyId) -> bool,
    {
        let len = direction.length();
        if !(len > 0.0 && len.is_finite()) {
            return None;
        }
        let dir = direction / len;
        let mut best: Option<(f64, Option<BodyId>)> = None;
        let mut consider = |t: f64, id: Option<BodyId>| {
            if t <= max_range && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, id));
            }
        };
        if let Some(g) = self.config.ground {
            if dir.y < 0.0 && origin.y >= g.height {
                consider((g.height - origin.y) / dir.y, None);
            }
        }
        for (i, b) in self.bodies().iter().enumerate() {
            if b.active && include(BodyId(i)) {
                if let Some(t) = ray_body(b, origin, dir) {
                    consider(t, Some(BodyId(i)));
                }
            }
        }
        best.map(|(t, body)| RayHit {
            distance: t,
            body,
            point: origin + dir * t,
        })
    }
}
