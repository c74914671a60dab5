//! Primitive-geometry worlds and exact ray casting.
//!
//! A world is one optional inward-facing shell (room, corridor) plus
//! outward-facing solids (pillars, steps, buildings) and one-sided planes.
//! Each primitive yields at most one front-facing hit per ray, and the
//! closest hit wins.

use crate::geometry::Vec3;

const RAY_EPS: f64 = 1e-9;

/// Whether a closed primitive's surfaces face its inside (a room seen from
/// within) or its outside (a solid obstacle).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facing {
    Inward,
    Outward,
}

#[derive(Debug, Clone, Copy)]
pub enum Primitive {
    /// Axis-aligned box.
    AxisBox { center: Vec3, half_extents: Vec3, facing: Facing },
    /// One-sided infinite plane; visible from the side its normal points to.
    Plane { point: Vec3, normal: Vec3 },
    /// Open z-aligned cylinder wall between `z0` and `z1`.
    CylinderZ { center_xy: [f64; 2], radius: f64, z0: f64, z1: f64, facing: Facing },
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub range: f64,
    pub point: Vec3,
    /// Front-facing surface normal at the hit (opposes the ray).
    pub normal: Vec3,
}

impl Primitive {
    fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        match self {
            Primitive::AxisBox { center, half_extents, facing } => {
                // Slab test.
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                let mut enter_axis = 0usize;
                let mut exit_axis = 0usize;
                for axis in 0..3 {
                    let o = origin[axis] - center[axis];
                    let d = dir[axis];
                    let h = half_extents[axis];
                    if d.abs() < 1e-15 {
                        if o.abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let (mut t0, mut t1) = ((-h - o) / d, (h - o) / d);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    if t0 > t_enter {
                        t_enter = t0;
                        enter_axis = axis;
                    }
                    if t1 < t_exit {
                        t_exit = t1;
                        exit_axis = axis;
                    }
                }
                if t_enter > t_exit {
                    return None;
                }
                let (t, axis, sign_toward_ray) = match facing {
                    Facing::Outward => (t_enter, enter_axis, -1.0),
                    Facing::Inward => (t_exit, exit_axis, -1.0),
                };
                if t <= RAY_EPS {
                    return None;
                }
                let point = origin + dir * t;
                let mut normal = Vec3::zeros();
                // Face normal opposing the ray along the hit axis.
                normal[axis] = sign_toward_ray * dir[axis].signum();
                Some(Hit { range: t, point, normal })
            }
            Primitive::Plane { point, normal } => {
                let denom = dir.dot(normal);
                if denom >= -1e-15 {
                    return None; // back side or parallel
                }
                let t = (point - origin).dot(normal) / denom;
                if t <= RAY_EPS {
                    return None;
                }
                Some(Hit { range: t, point: origin + dir * t, normal: *normal })
            }
            Primitive::CylinderZ { center_xy, radius, z0, z1, facing } => {
                let ox = origin.x - center_xy[0];
                let oy = origin.y - center_xy[1];
                let (dx, dy) = (dir.x, dir.y);
                let a = dx * dx + dy * dy;
                if a < 1e-18 {
                    return None;
                }
                let b = 2.0 * (ox * dx + oy * dy);
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)];
                let candidates: &[f64] = match facing {
                    Facing::Outward => &roots[..1],
                    Facing::Inward => &roots[1..],
                };
                for &t in candidates {
                    if t <= RAY_EPS {
                        continue;
                    }
                    let p = origin + dir * t;
                    if p.z < *z0 || p.z > *z1 {
                        continue;
                    }
                    let radial = Vec3::new(p.x - center_xy[0], p.y - center_xy[1], 0.0).normalize();
                    let normal = match facing {
                        Facing::Outward => radial,
                        Facing::Inward => -radial,
                    };
                    if normal.dot(dir) < 0.0 {
                        return Some(Hit { range: t, point: p, normal });
                    }
                }
                None
            }
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        match self {
            Primitive::AxisBox { center, half_extents, .. } => {
                (0..3).all(|a| (p[a] - center[a]).abs() <= half_extents[a])
            }
            Primitive::Plane { .. } => false,
            Primitive::CylinderZ { center_xy, radius, z0, z1, .. } => {
                let dx = p.x - center_xy[0];
                let dy = p.y - center_xy[1];
                dx * dx + dy * dy <= radius * radius && p.z >= *z0 && p.z <= *z1
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct World {
    pub primitives: Vec<Primitive>,
}

impl World {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        World { primitives }
    }

    /// Hollow cube of the given edge length centered at the origin.
    pub fn cube(edge: f64) -> Self {
        World::new(vec![Primitive::AxisBox {
            center: Vec3::zeros(),
            half_extents: Vec3::repeat(edge / 2.0),
            facing: Facing::Inward,
        }])
    }

    /// First front-facing hit along the ray within `max_range`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for prim in &self.primitives {
            if let Some(hit) = prim.cast(origin, dir) {
                if hit.range <= max_range && best.as_ref().map_or(true, |b| hit.range < b.range) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    /// Free space: inside some inward shell (when one exists) and outside
    /// every outward solid.
    pub fn in_free_space(&self, p: &Vec3) -> bool {
        let mut has_inward = false;
        let mut inside_inward = false;
        for prim in &self.primitives {
            let facing = match prim {
                Primitive::AxisBox { facing, .. } | Primitive::CylinderZ { facing, .. } => *facing,
                Primitive::Plane { .. } => continue,
            };
            match facing {
                Facing::Inward => {
                    has_inward = true;
                    if prim.contains(p) {
                        inside_inward = true;
                    }
                }
                Facing::Outward => {
                    if prim.contains(p) {
                        return false;
                    }
                }
            }
        }
        !has_inward || inside_inward
    }
}
