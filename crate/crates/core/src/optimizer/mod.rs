//! Sliding-window nonlinear least squares: residuals, analytic Jacobians
//! and the Levenberg-Marquardt solver over IMU states.

mod residuals;
mod window;

pub use residuals::{
    pim_residual, pim_residual_jacobians, pose_residual, pose_residual_jacobians, Extrinsics,
    Mat15, Mat6x15, RelativePoseMeas, Vec15, Vec6,
};
pub use window::{
    optimize_window, total_cost, update_after_optimization, update_after_optimization_samples,
    OptimizeOptions, OptimizeReport, OptimizerError, PimConstraint, PoseConstraint, PoseWeights,
    Termination, WindowProblem,
};
