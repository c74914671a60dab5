//! Named simulation scenarios: world geometry plus a trajectory through it.

use super::trajectory::{TrajectorySpec, Waypoint};
use super::world::{Facing, Primitive, World};
use crate::geometry::{so3_exp, PoseSE3, UnitQuat, Vec3};

/// A ready-to-simulate scenario.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub world: World,
    pub trajectory: TrajectorySpec,
}

/// Look up a preset by CLI name.
pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "room" => Some(room()),
        "corridor" | "narrow-corridor" => Some(narrow_corridor()),
        "staircase" => Some(staircase()),
        "outdoor-turn" => Some(outdoor_turn()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 4] = ["room", "corridor", "staircase", "outdoor-turn"];

fn pose(x: f64, y: f64, z: f64, yaw: f64) -> PoseSE3 {
    PoseSE3::new(so3_exp(&Vec3::new(0.0, 0.0, yaw)), Vec3::new(x, y, z))
}

fn pillar(x: f64, y: f64, hx: f64, hy: f64, z_mid: f64, hz: f64) -> Primitive {
    Primitive::AxisBox {
        center: Vec3::new(x, y, z_mid),
        half_extents: Vec3::new(hx, hy, hz),
        facing: Facing::Outward,
    }
}

/// Furnished room: box shell with interior obstacles, gentle loop.
pub fn room() -> Preset {
    let world = World::new(vec![
        Primitive::AxisBox {
            center: Vec3::new(0.0, 0.0, 2.0),
            half_extents: Vec3::new(6.0, 5.0, 2.0),
            facing: Facing::Inward,
        },
        pillar(2.5, 2.0, 0.4, 0.4, 1.0, 1.0),
        pillar(-3.0, -2.5, 0.5, 0.3, 1.25, 1.25),
        pillar(-2.0, 2.8, 0.3, 0.6, 0.75, 0.75),
        pillar(3.5, -2.0, 0.35, 0.35, 1.5, 1.5),
    ]);
    let waypoints = vec![
        Waypoint { t: 0.0, pose: pose(-3.0, 0.0, 1.5, 0.0) },
        Waypoint { t: 3.0, pose: pose(-1.0, -1.5, 1.4, 0.3) },
        Waypoint { t: 6.0, pose: pose(1.5, -1.0, 1.6, 0.9) },
        Waypoint { t: 9.0, pose: pose(2.5, 1.0, 1.5, 1.8) },
        Waypoint { t: 12.0, pose: pose(0.0, 2.0, 1.4, 2.6) },
        Waypoint { t: 15.0, pose: pose(-2.5, 1.0, 1.5, 3.3) },
    ];
    Preset { name: "room", world, trajectory: TrajectorySpec::new(waypoints) }
}

/// Narrow corridor with wall pillars for along-axis texture. Under
/// vertical-clip degradation only the vertical surfaces return, which
/// starves z-translation (and pitch) of constraints while the trajectory
/// deliberately undulates in z.
pub fn narrow_corridor() -> Preset {
    let mut prims = vec![Primitive::AxisBox {
        center: Vec3::new(15.0, 0.0, 1.5),
        half_extents: Vec3::new(17.0, 1.5, 1.5),
        facing: Facing::Inward,
    }];
    // Pillars protruding from both walls every 3 m give the ICP x-traction.
    let mut k = 0;
    let mut x = 0.0;
    while x <= 28.0 {
        let (hx, hy) = if k % 2 == 0 { (0.15, 0.18) } else { (0.22, 0.12) };
        prims.push(pillar(x, 1.5 - hy, hx, hy, 1.5, 1.5));
        prims.push(pillar(x + 1.4, -(1.5 - hy), hx, hy, 1.5, 1.5));
        x += 3.0;
        k += 1;
    }
    let world = World::new(prims);

    // 24 s down the corridor with ±0.35 m z-undulation and a mild yaw wiggle.
    let mut waypoints = Vec::new();
    let total = 24.0;
    let mut t = 0.0;
    while t <= total + 1e-9 {
        let u = t / total;
        let z = 1.5 + 0.35 * (2.0 * std::f64::consts::PI * t / 8.0).sin();
        let yaw = 2.0f64.to_radians() * (2.0 * std::f64::consts::PI * t / 11.0).sin();
        let y = 0.25 * (2.0 * std::f64::consts::PI * t / 13.0).sin();
        waypoints.push(Waypoint { t, pose: pose(1.0 + 26.0 * u, y, z, yaw) });
        t += 1.0;
    }
    let mut spec = TrajectorySpec::new(waypoints);
    spec.hold_start = 1.5;
    spec.hold_end = 0.5;
    Preset { name: "corridor", world, trajectory: spec }
}

/// Two flights of steps inside a tall shaft, with a 180-degree turn.
pub fn staircase() -> Preset {
    let mut prims = vec![Primitive::AxisBox {
        center: Vec3::new(3.0, 2.0, 3.0),
        half_extents: Vec3::new(4.0, 3.2, 3.0),
        facing: Facing::Inward,
    }];
    // First flight rising along +x, then a landing and a return flight.
    for k in 0..8 {
        let x = 0.5 + 0.6 * k as f64;
        let h = 0.15 * (k + 1) as f64;
        prims.push(Primitive::AxisBox {
            center: Vec3::new(x, 0.8, h / 2.0),
            half_extents: Vec3::new(0.3, 0.8, h / 2.0),
            facing: Facing::Outward,
        });
        prims.push(Primitive::AxisBox {
            center: Vec3::new(x, 3.2, 1.2 + h / 2.0),
            half_extents: Vec3::new(0.3, 0.8, h / 2.0),
            facing: Facing::Outward,
        });
    }
    let world = World::new(prims);
    let waypoints = vec![
        Waypoint { t: 0.0, pose: pose(0.2, 0.8, 1.2, 0.0) },
        Waypoint { t: 4.0, pose: pose(2.2, 0.8, 1.7, 0.0) },
        Waypoint { t: 8.0, pose: pose(4.6, 0.8, 2.3, 0.0) },
        Waypoint { t: 11.0, pose: pose(5.8, 2.0, 2.5, 1.6) },
        Waypoint { t: 14.0, pose: pose(4.6, 3.2, 2.7, 3.1) },
        Waypoint { t: 18.0, pose: pose(2.2, 3.2, 3.3, 3.1) },
        Waypoint { t: 22.0, pose: pose(0.4, 3.2, 3.9, 3.1) },
    ];
    Preset { name: "staircase", world, trajectory: TrajectorySpec::new(waypoints) }
}

/// Outdoor corner: ground plane and building faces around a 90-degree turn.
pub fn outdoor_turn() -> Preset {
    let world = World::new(vec![
        Primitive::Plane { point: Vec3::zeros(), normal: Vec3::new(0.0, 0.0, 1.0) },
        // Buildings lining an L-shaped street.
        pillar(6.0, 14.0, 4.0, 6.0, 5.0, 5.0),
        pillar(-4.5, 8.0, 2.5, 10.0, 4.0, 4.0),
        pillar(10.0, -2.5, 9.0, 2.5, 6.0, 6.0),
        pillar(18.0, 8.0, 3.0, 5.0, 5.0, 5.0),
        pillar(12.0, 19.0, 6.0, 3.0, 4.0, 4.0),
    ]);
    let waypoints = vec![
        Waypoint { t: 0.0, pose: pose(0.0, 1.5, 1.4, 0.0) },
        Waypoint { t: 4.0, pose: pose(4.0, 1.8, 1.4, 0.05) },
        Waypoint { t: 8.0, pose: pose(8.5, 2.2, 1.4, 0.3) },
        Waypoint { t: 12.0, pose: pose(11.5, 4.5, 1.4, 1.0) },
        Waypoint { t: 16.0, pose: pose(12.8, 8.0, 1.4, 1.5) },
        Waypoint { t: 20.0, pose: pose(13.0, 12.0, 1.4, 1.57) },
    ];
    Preset { name: "outdoor-turn", world, trajectory: TrajectorySpec::new(waypoints) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trajectory::Trajectory;

    #[test]
    fn all_presets_build_and_stay_in_free_space() {
        for name in PRESET_NAMES {
            let preset = by_name(name).unwrap();
            let traj = Trajectory::build(&preset.trajectory).unwrap();
            let mut t = traj.start_time();
            while t <= traj.end_time() {
                let gt = traj.sample(t).unwrap();
                assert!(
                    preset.world.in_free_space(&gt.pose.translation),
                    "{name}: pose at t={t} ({}) leaves free space",
                    gt.pose.translation
                );
                t += 0.25;
            }
        }
        assert!(by_name("nonsense").is_none());
        let _ = UnitQuat::identity();
    }
}
