//! Deterministic sensor simulator: primitive worlds, spline trajectories
//! with exact kinematics, IMU synthesis and ray-cast LiDAR scans with
//! degradation modes.

pub mod imu_synth;
pub mod lidar;
pub mod presets;
pub mod trajectory;
pub mod world;

pub use imu_synth::{synth_imu, BiasSpec, ImuSynthError};
pub use lidar::{synth_scan, Degradation, LidarModel, LidarSimError};
pub use presets::{by_name as preset_by_name, Preset, PRESET_NAMES};
pub use trajectory::{
    sample_ground_truth, GroundTruth, Trajectory, TrajectoryError, TrajectorySpec, Waypoint,
};
pub use world::{Facing, Hit, Primitive, World};
