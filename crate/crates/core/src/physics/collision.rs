//! Narrow-phase queries. Every contact is a collision vertex of one body
//! (a capsule endpoint or a box corner) against the core shape of another.

use super::{RigidBody, Shape, Vec2};

/// Candidate contact before impulses are attached.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Manifold {
    pub feature: usize,
    pub point: Vec2,
    /// Unit normal pushing the vertex body away from the other body.
    pub normal: Vec2,
    pub separation: f64,
}

pub(crate) fn against_ground(body: &RigidBody, height: f64, margin: f64) -> Vec<Manifold> {
    let (verts, radius) = body.shape.vertices();
    verts
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let w = body.to_world(v);
            let separation = w.y - radius - height;
            (separation < margin).then(|| Manifold {
                feature: i,
                point: Vec2::new(w.x, w.y - radius),
                normal: Vec2::Y,
                separation,
            })
        })
        .collect()
}

/// Vertices of `a` against the core shape of `b`.
pub(crate) fn vertices_against(a: &RigidBody, b: &RigidBody, margin: f64) -> Vec<Manifold> {
    let (verts, ra) = a.shape.vertices();
    let mut out = Vec::new();
    for (i, &v) in verts.iter().enumerate() {
        let w = a.to_world(v);
        let local = b.to_local(w);
        let (dist, n_local, rb) = match b.shape {
            Shape::Capsule {
                half_length,
                radius,
            } => {
                let q = Vec2::new(0.0, local.y.clamp(-half_length, half_length));
                let d = local - q;
                let len = d.length();
                let n = if len > 1e-12 { d / len } else { Vec2::X };
                (len, n, radius)
            }
            Shape::Box { half_extents: h } => {
                let dx = local.x.abs() - h.x;
                let dy = local.y.abs() - h.y;
                if dx > 0.0 || dy > 0.0 {
                    let c = Vec2::new(local.x.clamp(-h.x, h.x), local.y.clamp(-h.y, h.y));
                    let d = local - c;
                    let len = d.length();
                    (len, d / len, 0.0)
                } else if dx > dy {
                    (dx, Vec2::new(local.x.signum(), 0.0), 0.0)
                } else {
                    (dy, Vec2::new(0.0, local.y.signum()), 0.0)
                }
            }
        };
        let separation = dist - ra - rb;
        if separation < margin {
            let normal = super::rotate(b.angle, n_local);
            out.push(Manifold {
                feature: i,
                point: w - normal * ra,
                normal,
                separation,
            });
        }
    }
    out
}

pub(crate) fn overlaps(a: &RigidBody, b: &RigidBody) -> bool {
    let reach = a.shape.bounding_radius() + b.shape.bounding_radius();
    if a.position.distance_squared(b.position) > reach * reach {
        return false;
    }
    vertices_against(a, b, 0.0).iter().any(|m| m.separation < 0.0)
        || vertices_against(b, a, 0.0).iter().any(|m| m.separation < 0.0)
}
