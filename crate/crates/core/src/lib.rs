//! LiDAR-inertial odometry at desk scale.
//!
//! The crate fuses multi-ring spinning-LiDAR scan matching with IMU
//! pre-integration in a sliding-window nonlinear least squares problem, and
//! ships the supporting cast needed to exercise every claim without
//! hardware: a deterministic world/trajectory/sensor simulator and
//! relative-error trajectory metrics.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`geometry`] — quaternion / SO(3) / SE(3) primitives and conventions.
//! * [`imu`] — measurement model, midpoint state propagation, 15x15
//!   covariance propagation.
//! * [`preint`] — batches of IMU samples collapsed into relative motion
//!   increments with bias Jacobians.
//! * [`frontend`] — ring handling, normal estimation, two-stage
//!   point-to-plane ICP with mismatch rejection, local map upkeep.
//! * [`optimizer`] — the sliding-window problem, its residuals and the
//!   Levenberg-Marquardt solver.
//! * [`sim`] — primitive-geometry worlds, spline trajectories, IMU and
//!   LiDAR synthesis with degradation modes.
//! * [`eval`] — trajectory association and relative translation/rotation
//!   error metrics.
//! * [`pipeline`] — configuration, dataset layout and the end-to-end run
//!   loop behind the CLI.

pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod imu;
pub mod optimizer;
pub mod pipeline;
pub mod preint;
pub mod sim;

pub use geometry::{Mat3, PoseSE3, UnitQuat, Vec3};
pub use imu::{ImuSample, ImuState, NoiseParams};
pub use preint::Pim;
