//! Synthetic world: flat terrain patches, extruded obstacles, and scripted
//! actors, with first-hit ray casting for the simulated sensors.
//!
//! All polygons are convex; intersection uses half-plane clipping, which
//! stays robust at vertices.

use nalgebra::{Point3, Vector2, Vector3};

use crate::panoptic::ClassId;

/// Convex polygon with counter-clockwise winding (normalized on build).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    verts: Vec<Vector2<f64>>,
}

impl ConvexPolygon {
    pub fn new(mut verts: Vec<Vector2<f64>>) -> Result<Self, String> {
        if verts.len() < 3 {
            return Err("polygon needs at least 3 vertices".into());
        }
        let area: f64 = verts
            .windows(2)
            .map(|w| w[0].x * w[1].y - w[1].x * w[0].y)
            .sum::<f64>()
            + verts.last().unwrap().x * verts[0].y
            - verts[0].x * verts.last().unwrap().y;
        if area.abs() < 1e-12 {
            return Err("polygon is degenerate".into());
        }
        if area < 0.0 {
            verts.reverse();
        }
        // Convexity check: every turn is a left turn (within tolerance).
        let n = verts.len();
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            let c = verts[(i + 2) % n];
            let cross = (b - a).perp(&(c - b));
            if cross < -1e-9 {
                return Err("polygon is not convex".into());
            }
        }
        Ok(Self { verts })
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![
            Vector2::new(x0, y0),
            Vector2::new(x1, y0),
            Vector2::new(x1, y1),
            Vector2::new(x0, y1),
        ])
        .expect("rectangle is convex")
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.verts
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        let n = self.verts.len();
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            if (b - a).perp(&(p - a)) < -1e-9 {
                return false;
            }
        }
        true
    }

    /// Parameter interval [t_in, t_out] where the 2D ray o + t*d lies inside,
    /// via half-plane clipping. None when the ray misses.
    pub fn ray_interval(&self, o: Vector2<f64>, d: Vector2<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let n = self.verts.len();
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            let edge = b - a;
            // Inward normal for CCW winding.
            let normal = Vector2::new(-edge.y, edge.x);
            let denom = normal.dot(&d);
            let num = normal.dot(&(a - o));
            if denom.abs() < 1e-15 {
                if num > 0.0 {
                    return None; // parallel and outside this half-plane
                }
                continue;
            }
            let t = num / denom;
            if denom > 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// Minimum distance from a point to the polygon boundary (0 inside).
    pub fn distance(&self, p: Vector2<f64>) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let n = self.verts.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            best = best.min(point_segment_distance(p, a, b));
        }
        best
    }
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[derive(Debug, Clone)]
pub struct TerrainPatch {
    pub polygon: ConvexPolygon,
    pub class_id: ClassId,
}

#[derive(Debug, Clone)]
pub struct Obstacle {
    pub polygon: ConvexPolygon,
    pub height: f64,
    pub class_id: ClassId,
}

/// A movable box actor following a waypoint script at constant speed,
/// holding position at the end of the script.
#[derive(Debug, Clone)]
pub struct Actor {
    pub half_extents: Vector2<f64>,
    pub height: f64,
    pub class_id: ClassId,
    pub speed: f64,
    pub script: Vec<Vector2<f64>>,
    pub position: Vector2<f64>,
}

impl Actor {
    pub fn position_at(&self, t: f64) -> Vector2<f64> {
        if self.script.is_empty() {
            return self.position;
        }
        if self.script.len() == 1 || self.speed <= 0.0 {
            return self.script[0];
        }
        let mut remaining = self.speed * t.max(0.0);
        for w in self.script.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if remaining <= len {
                if len == 0.0 {
                    continue;
                }
                return w[0] + seg * (remaining / len);
            }
            remaining -= len;
        }
        *self.script.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub class_id: ClassId,
    pub instance_id: u32,
}

#[derive(Debug, Clone)]
pub struct World {
    pub default_terrain: ClassId,
    pub patches: Vec<TerrainPatch>,
    pub obstacles: Vec<Obstacle>,
    pub actors: Vec<Actor>,
    /// (min_x, min_y, max_x, max_y); terrain extends beyond with the default class.
    pub bounds: [f64; 4],
    pub time: f64,
}

impl World {
    pub fn set_time(&mut self, t: f64) {
        self.time = t;
        for a in &mut self.actors {
            a.position = a.position_at(t);
        }
    }

    /// Ground class at a world position: the first patch containing it, else
    /// the default terrain class. The ground plane is infinite.
    pub fn terrain_class_at(&self, x: f64, y: f64) -> ClassId {
        let p = Vector2::new(x, y);
        for patch in &self.patches {
            if patch.polygon.contains(p) {
                return patch.class_id;
            }
        }
        self.default_terrain
    }

    /// First hit along a world-frame ray, against the ground plane z = 0,
    /// obstacle prisms, and actor boxes.
    pub fn raycast(&self, origin: Point3<f64>, dir: Vector3<f64>, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |hit: Hit| {
            if hit.t > 1e-9 && hit.t <= max_range && best.map_or(true, |b| hit.t < b.t) {
                best = Some(hit);
            }
        };

        // Ground plane.
        if dir.z < -1e-12 {
            let t = -origin.z / dir.z;
            if t > 1e-9 && t <= max_range {
                let hx = origin.x + dir.x * t;
                let hy = origin.y + dir.y * t;
                consider(Hit {
                    t,
                    class_id: self.terrain_class_at(hx, hy),
                    instance_id: 0,
                });
            }
        }

        let o2 = Vector2::new(origin.x, origin.y);
        let d2 = Vector2::new(dir.x, dir.y);
        for (i, obstacle) in self.obstacles.iter().enumerate() {
            if let Some(t) =
                prism_hit(&obstacle.polygon, obstacle.height, origin.z, dir.z, o2, d2)
            {
                consider(Hit {
                    t,
                    class_id: obstacle.class_id,
                    instance_id: (self.actors.len() + i + 1) as u32,
                });
            }
        }
        for (i, actor) in self.actors.iter().enumerate() {
            let min = actor.position - actor.half_extents;
            let max = actor.position + actor.half_extents;
            if let Some(t) = box_hit(min, max, actor.height, origin, dir) {
                consider(Hit {
                    t,
                    class_id: actor.class_id,
                    instance_id: (i + 1) as u32,
                });
            }
        }
        best
    }

    /// Distance from a point to the nearest obstacle or actor boundary.
    pub fn clearance(&self, x: f64, y: f64) -> Option<f64> {
        let p = Vector2::new(x, y);
        let mut best: Option<f64> = None;
        for o in &self.obstacles {
            let d = o.polygon.distance(p);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
        for a in &self.actors {
            let dx = ((p.x - a.position.x).abs() - a.half_extents.x).max(0.0);
            let dy = ((p.y - a.position.y).abs() - a.half_extents.y).max(0.0);
            let d = (dx * dx + dy * dy).sqrt();
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
        best
    }
}

/// Advance scripted actors by dt (piecewise-constant velocity, hold at end).
pub fn step_actors(world: &mut World, dt: f64) {
    assert!(dt > 0.0);
    world.set_time(world.time + dt);
}

fn prism_hit(
    poly: &ConvexPolygon,
    height: f64,
    oz: f64,
    dz: f64,
    o2: Vector2<f64>,
    d2: Vector2<f64>,
) -> Option<f64> {
    let (mut t0, mut t1) = if d2.norm_squared() < 1e-24 {
        // Vertical ray: inside the footprint or not.
        if poly.contains(o2) {
            (0.0, f64::INFINITY)
        } else {
            return None;
        }
    } else {
        poly.ray_interval(o2, d2)?
    };
    // Clip by the z slab [0, height].
    if dz.abs() < 1e-15 {
        if oz < 0.0 || oz > height {
            return None;
        }
    } else {
        let mut za = (0.0 - oz) / dz;
        let mut zb = (height - oz) / dz;
        if za > zb {
            std::mem::swap(&mut za, &mut zb);
        }
        t0 = t0.max(za);
        t1 = t1.min(zb);
    }
    if t0 > t1 || t1 <= 1e-9 {
        return None;
    }
    Some(t0.max(1e-9))
}

fn box_hit(
    min: Vector2<f64>,
    max: Vector2<f64>,
    height: f64,
    origin: Point3<f64>,
    dir: Vector3<f64>,
) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    let lo = [min.x, min.y, 0.0];
    let hi = [max.x, max.y, height];
    let o = [origin.x, origin.y, origin.z];
    let d = [dir.x, dir.y, dir.z];
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
        } else {
            let mut a = (lo[k] - o[k]) / d[k];
            let mut b = (hi[k] - o[k]) / d[k];
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
    }
    if t1 <= 1e-9 {
        return None;
    }
    Some(t0.max(1e-9))
}
