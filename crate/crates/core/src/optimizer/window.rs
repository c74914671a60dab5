//! Sliding-window nonlinear least squares over IMU states.
//!
//! Levenberg-Marquardt on the manifold: additive updates for position,
//! velocity and biases, `exp` retraction for rotations. The first window
//! state is held fixed to anchor the gauge. Residuals are whitened by the
//! square-root information of their constraint: pre-integration constraints
//! by the integrated increment covariance plus bias random-walk terms, pose
//! constraints by a configurable diagonal.

use super::residuals::{
    pim_residual_jacobians, pose_residual_jacobians, Extrinsics, RelativePoseMeas,
};
use crate::geometry::{so3_exp, Vec3};
use crate::imu::{propagate_full, ImuError, ImuSample, ImuState, NoiseParams, Segment};
use crate::preint::Pim;
use nalgebra::{DMatrix, DVector, SMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("window needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("constraint ({i},{j}) is invalid for a window of {len} states")]
    BadConstraintIndex { i: usize, j: usize, len: usize },
    #[error("state pair ({i},{j}) must carry exactly one pre-integration constraint")]
    MissingPimConstraint { i: usize, j: usize },
    #[error("non-finite {what} in constraint {constraint} ({kind})")]
    NumericalFailure { what: &'static str, constraint: usize, kind: &'static str },
    #[error("normal equations not solvable (damping {lambda:.3e})")]
    SolveFailed { lambda: f64 },
    #[error(transparent)]
    Imu(#[from] ImuError),
}

#[derive(Debug, Clone)]
pub struct PimConstraint {
    pub i: usize,
    pub j: usize,
    pub pim: Pim,
}

#[derive(Debug, Clone)]
pub struct PoseConstraint {
    pub i: usize,
    pub j: usize,
    pub meas: RelativePoseMeas,
}

/// Diagonal standard deviations used to weight the pose residual rows.
#[derive(Debug, Clone, Copy)]
pub struct PoseWeights {
    /// Translation rows, m.
    pub sigma_t: Vec3,
    /// Rotation rows, rad.
    pub sigma_r: Vec3,
}

impl Default for PoseWeights {
    fn default() -> Self {
        PoseWeights { sigma_t: Vec3::repeat(0.02), sigma_r: Vec3::repeat(0.01) }
    }
}

/// One optimization window: ordered states plus the constraints among them.
#[derive(Debug, Clone)]
pub struct WindowProblem {
    pub states: Vec<ImuState>,
    pub pims: Vec<PimConstraint>,
    pub poses: Vec<PoseConstraint>,
    pub extrinsics: Extrinsics,
    pub gravity: Vec3,
    pub pose_weights: PoseWeights,
    /// Bias random-walk densities used to weight the bias residual rows.
    pub sigma_nba: Vec3,
    pub sigma_nbw: Vec3,
    /// Leading states held fixed (gauge anchor); at least 1.
    pub num_fixed: usize,
}

impl WindowProblem {
    pub fn new(states: Vec<ImuState>, noise: &NoiseParams) -> Self {
        WindowProblem {
            states,
            pims: Vec::new(),
            poses: Vec::new(),
            extrinsics: Extrinsics::default(),
            gravity: noise.gravity,
            pose_weights: PoseWeights::default(),
            sigma_nba: noise.sigma_nba,
            sigma_nbw: noise.sigma_nbw,
            num_fixed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.states.len() < 2 {
            return Err(OptimizerError::TooFewStates(self.states.len()));
        }
        let len = self.states.len();
        for c in self.pims.iter().map(|c| (c.i, c.j)).chain(self.poses.iter().map(|c| (c.i, c.j))) {
            if c.0 >= c.1 || c.1 >= len {
                return Err(OptimizerError::BadConstraintIndex { i: c.0, j: c.1, len });
            }
        }
        for k in 0..len - 1 {
            let count = self.pims.iter().filter(|c| c.i == k && c.j == k + 1).count();
            if count != 1 {
                return Err(OptimizerError::MissingPimConstraint { i: k, j: k + 1 });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative cost decrease below threshold on an accepted step.
    CostConverged,
    /// Gradient infinity-norm below threshold.
    GradientSmall,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Costs after each accepted step (monotone non-increasing).
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_reject_scale: f64,
    pub lambda_accept_scale: f64,
    pub relative_cost_tol: f64,
    pub gradient_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_reject_scale: 10.0,
            lambda_accept_scale: 0.5,
            relative_cost_tol: 1e-9,
            gradient_tol: 1e-10,
        }
    }
}

/// Square root of the inverse of a symmetric PSD matrix, via eigen
/// decomposition with a floor on the eigenvalues.
fn sqrt_information<const N: usize>(cov: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let eig = nalgebra::SymmetricEigen::new(*cov);
    let mut d = SMatrix::<f64, N, N>::zeros();
    for k in 0..N {
        let ev = eig.eigenvalues[k].max(1e-16);
        d[(k, k)] = 1.0 / ev.sqrt();
    }
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn pim_sqrt_info(pim: &Pim, prob: &WindowProblem) -> SMatrix<f64, 15, 15> {
    let mut cov = SMatrix::<f64, 15, 15>::zeros();
    let mut c9 = pim.cov;
    // Keep the whitening well-posed for very short or noise-free increments.
    for k in 0..9 {
        c9[(k, k)] += 1e-12;
    }
    cov.fixed_view_mut::<9, 9>(0, 0).copy_from(&c9);
    let dt = pim.delta_t.max(1e-6);
    for k in 0..3 {
        cov[(9 + k, 9 + k)] = (prob.sigma_nba[k] * prob.sigma_nba[k] * dt).max(1e-12);
        cov[(12 + k, 12 + k)] = (prob.sigma_nbw[k] * prob.sigma_nbw[k] * dt).max(1e-12);
    }
    sqrt_information(&cov)
}

fn pose_sqrt_info(w: &PoseWeights) -> SMatrix<f64, 6, 6> {
    let mut m = SMatrix::<f64, 6, 6>::zeros();
    for k in 0..3 {
        m[(k, k)] = 1.0 / w.sigma_t[k];
        m[(3 + k, 3 + k)] = 1.0 / w.sigma_r[k];
    }
    m
}

/// Weighted total cost: the sum of squared whitened residual norms.
pub fn total_cost(prob: &WindowProblem) -> f64 {
    let mut cost = 0.0;
    for c in &prob.pims {
        let (r, _, _) =
            pim_residual_jacobians(&prob.states[c.i], &prob.states[c.j], &c.pim, &prob.gravity);
        let wr = pim_sqrt_info(&c.pim, prob) * r;
        cost += wr.norm_squared();
    }
    for c in &prob.poses {
        let (r, _, _) =
            pose_residual_jacobians(&prob.states[c.i], &prob.states[c.j], &c.meas, &prob.extrinsics);
        let wr = pose_sqrt_info(&prob.pose_weights) * r;
        cost += wr.norm_squared();
    }
    cost
}

fn apply_step(states: &[ImuState], free0: usize, delta: &DVector<f64>) -> Vec<ImuState> {
    let mut out = states.to_vec();
    for (slot, state) in out.iter_mut().enumerate().skip(free0) {
        let base = (slot - free0) * 15;
        let seg = |off: usize| Vec3::new(delta[base + off], delta[base + off + 1], delta[base + off + 2]);
        state.p += seg(0);
        state.v += seg(3);
        state.q = state.q * so3_exp(&seg(6));
        state.ba += seg(9);
        state.bg += seg(12);
    }
    out
}

struct Linearized {
    jacobian: DMatrix<f64>,
    residuals: DVector<f64>,
}

fn linearize(prob: &WindowProblem, states: &[ImuState]) -> Result<Linearized, OptimizerError> {
    let free0 = prob.num_fixed;
    let n_free = states.len() - free0;
    let rows = prob.pims.len() * 15 + prob.poses.len() * 6;
    let mut jac = DMatrix::<f64>::zeros(rows, n_free * 15);
    let mut res = DVector::<f64>::zeros(rows);
    let mut row = 0usize;

    let check = |v: f64, what: &'static str, idx: usize, kind: &'static str| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(OptimizerError::NumericalFailure { what, constraint: idx, kind })
        }
    };

    for (idx, c) in prob.pims.iter().enumerate() {
        let (r, ji, jj) = pim_residual_jacobians(&states[c.i], &states[c.j], &c.pim, &prob.gravity);
        let sqrt_i = pim_sqrt_info(&c.pim, prob);
        let (wr, wji, wjj) = (sqrt_i * r, sqrt_i * ji, sqrt_i * jj);
        check(wr.norm_squared(), "residual", idx, "pim")?;
        check(wji.norm_squared() + wjj.norm_squared(), "jacobian", idx, "pim")?;
        res.rows_mut(row, 15).copy_from(&wr);
        if c.i >= free0 {
            jac.view_mut((row, (c.i - free0) * 15), (15, 15)).copy_from(&wji);
        }
        if c.j >= free0 {
            jac.view_mut((row, (c.j - free0) * 15), (15, 15)).copy_from(&wjj);
        }
        row += 15;
    }
    for (idx, c) in prob.poses.iter().enumerate() {
        let (r, ji, jj) =
            pose_residual_jacobians(&states[c.i], &states[c.j], &c.meas, &prob.extrinsics);
        let sqrt_i = pose_sqrt_info(&prob.pose_weights);
        let (wr, wji, wjj) = (sqrt_i * r, sqrt_i * ji, sqrt_i * jj);
        check(wr.norm_squared(), "residual", idx, "pose")?;
        check(wji.norm_squared() + wjj.norm_squared(), "jacobian", idx, "pose")?;
        res.rows_mut(row, 6).copy_from(&wr);
        if c.i >= free0 {
            jac.view_mut((row, (c.i - free0) * 15), (6, 15)).copy_from(&wji);
        }
        if c.j >= free0 {
            jac.view_mut((row, (c.j - free0) * 15), (6, 15)).copy_from(&wjj);
        }
        row += 6;
    }
    Ok(Linearized { jacobian: jac, residuals: res })
}

fn cost_of(prob: &WindowProblem, states: &[ImuState]) -> f64 {
    let mut scratch = prob.clone();
    scratch.states = states.to_vec();
    total_cost(&scratch)
}

/// Levenberg-Marquardt over the window. Returns the optimized states and a
/// report; accepted steps never increase the cost.
pub fn optimize_window(
    prob: &WindowProblem,
    opts: &OptimizeOptions,
) -> Result<(Vec<ImuState>, OptimizeReport), OptimizerError> {
    prob.validate()?;
    let free0 = prob.num_fixed.max(1).min(prob.states.len() - 1);
    let mut states = prob.states.clone();
    let mut cost = cost_of(prob, &states);
    let initial_cost = cost;
    let mut lambda = opts.initial_lambda;
    let mut report = OptimizeReport {
        iterations: 0,
        accepted_steps: 0,
        initial_cost,
        final_cost: cost,
        termination: Termination::MaxIterations,
        cost_trace: vec![cost],
    };

    for iter in 0..opts.max_iterations {
        report.iterations = iter;
        let lin = linearize(
            &WindowProblem { states: states.clone(), ..prob.clone() },
            &states,
        )?;
        let jt = lin.jacobian.transpose();
        let gradient = &jt * &lin.residuals;
        if gradient.amax() < opts.gradient_tol {
            report.termination = Termination::GradientSmall;
            break;
        }
        let hess = &jt * &lin.jacobian;

        let mut stepped = false;
        for _ in 0..25 {
            let mut damped = hess.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda;
            }
            let delta = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&gradient)),
                None => {
                    lambda *= opts.lambda_reject_scale;
                    continue;
                }
            };
            let candidate = apply_step(&states, free0, &delta);
            let new_cost = cost_of(prob, &candidate);
            if new_cost.is_finite() && new_cost <= cost {
                let rel_decrease = (cost - new_cost) / cost.max(1e-300);
                states = candidate;
                cost = new_cost;
                lambda = (lambda * opts.lambda_accept_scale).max(1e-12);
                report.accepted_steps += 1;
                report.cost_trace.push(cost);
                stepped = true;
                if rel_decrease < opts.relative_cost_tol {
                    report.termination = Termination::CostConverged;
                }
                break;
            }
            lambda *= opts.lambda_reject_scale;
        }
        if !stepped {
            // Damping exhausted without an acceptable step: the gradient is
            // numerically stalled at this cost level.
            report.termination = Termination::CostConverged;
            break;
        }
        if report.termination == Termination::CostConverged {
            break;
        }
    }
    report.final_cost = cost;
    Ok((states, report))
}

/// Re-propagate the high-rate state from an optimized anchor through the
/// samples that arrived after it. With no pending samples the anchor is
/// returned unchanged.
pub fn update_after_optimization(
    anchor: &ImuState,
    pending: &[Segment],
    noise: &NoiseParams,
) -> Result<ImuState, OptimizerError> {
    let mut state = *anchor;
    for seg in pending {
        state = propagate_full(&state, &seg.sample, seg.dt, noise)?;
    }
    Ok(state)
}

/// Convenience for tests and callers holding raw samples.
pub fn update_after_optimization_samples(
    anchor: &ImuState,
    pending: &[ImuSample],
    noise: &NoiseParams,
) -> Result<ImuState, OptimizerError> {
    if pending.is_empty() {
        return Ok(*anchor);
    }
    let t1 = pending.last().unwrap().t;
    let segs = crate::imu::stream_segments(pending, anchor.t.min(pending[0].t), t1)?;
    update_after_optimization(anchor, &segs, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{log_unchecked, PoseSE3};
    use crate::imu::{stream_segments, NoiseParams};
    use crate::preint::{pim_integrate_segments, Pim};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Noise-free window of `n` states along a smooth trajectory, with
    /// consistent PIM and relative-pose constraints.
    pub(crate) fn synthetic_window(seed: u64, n: usize) -> (WindowProblem, Vec<ImuState>) {
        let noise = NoiseParams::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rate = 200.0;
        let span = 0.2 * n as f64;
        let steps = (span * rate) as usize;
        let (f1, f2) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let samples: Vec<ImuSample> = (0..=steps)
            .map(|k| {
                let t = k as f64 / rate;
                ImuSample {
                    t,
                    accel: Vec3::new(
                        1.5 * (f1 * t).sin(),
                        -0.8 * (f2 * t).cos(),
                        9.81 + 0.4 * (f1 * 1.3 * t).sin(),
                    ),
                    gyro: Vec3::new(0.3 * (f2 * t).cos(), 0.2 * (f1 * t).sin(), 0.4),
                }
            })
            .collect();

        let mut truth = vec![ImuState::at_rest(0.0)];
        let mut pims = Vec::new();
        for k in 0..n - 1 {
            let (t0, t1) = (0.2 * k as f64, 0.2 * (k + 1) as f64);
            let segs = stream_segments(&samples, t0, t1).unwrap();
            let prev = *truth.last().unwrap();
            let pim = pim_integrate_segments(Pim::new(prev.ba, prev.bg), &segs, &noise).unwrap();
            let (p, v, q) = crate::preint::pim_predict(&prev, &pim, &noise.gravity);
            truth.push(ImuState { t: t1, p, v, q, ..prev });
            pims.push(PimConstraint { i: k, j: k + 1, pim });
        }

        let ext = Extrinsics {
            q_il: crate::geometry::so3_exp(&Vec3::new(0.02, -0.01, 0.3)),
            p_il: Vec3::new(0.08, 0.0, 0.05),
        };
        let t_ext = PoseSE3::new(ext.q_il, ext.p_il);
        let poses = (0..n - 1)
            .map(|k| {
                let ti = PoseSE3::new(truth[k].q, truth[k].p) * t_ext;
                let tj = PoseSE3::new(truth[k + 1].q, truth[k + 1].p) * t_ext;
                let rel = ti.between(&tj);
                PoseConstraint {
                    i: k,
                    j: k + 1,
                    meas: RelativePoseMeas { q: rel.rotation, t: rel.translation },
                }
            })
            .collect();

        let mut prob = WindowProblem::new(truth.clone(), &noise);
        prob.pims = pims;
        prob.poses = poses;
        prob.extrinsics = ext;
        (prob, truth)
    }

    fn max_state_error(a: &[ImuState], b: &[ImuState]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                (x.p - y.p)
                    .norm()
                    .max((x.v - y.v).norm())
                    .max(log_unchecked(&(x.q.inverse() * y.q)).norm())
                    .max((x.ba - y.ba).norm())
                    .max((x.bg - y.bg).norm())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ground_truth_costs_zero() {
        let (prob, _) = synthetic_window(1, 5);
        assert!(total_cost(&prob) < 1e-12, "cost {}", total_cost(&prob));
    }

    #[test]
    fn cost_is_local_to_touched_constraints() {
        let (mut prob, truth) = synthetic_window(2, 5);
        prob.states[2].p += Vec3::new(0.05, 0.0, 0.0);
        // Only the 4 constraints touching state 2 contribute.
        let mut manual = 0.0;
        for c in &prob.pims {
            if c.i == 2 || c.j == 2 {
                let r = super::super::residuals::pim_residual(
                    &prob.states[c.i],
                    &prob.states[c.j],
                    &c.pim,
                    &prob.gravity,
                );
                manual += (pim_sqrt_info(&c.pim, &prob) * r).norm_squared();
            }
        }
        for c in &prob.poses {
            if c.i == 2 || c.j == 2 {
                let r = super::super::residuals::pose_residual(
                    &prob.states[c.i],
                    &prob.states[c.j],
                    &c.meas,
                    &prob.extrinsics,
                );
                manual += (pose_sqrt_info(&prob.pose_weights) * r).norm_squared();
            }
        }
        approx::assert_relative_eq!(total_cost(&prob), manual, epsilon = 1e-12);
        let _ = truth;
    }

    #[test]
    fn cost_matches_independent_recomputation() {
        let (mut prob, _) = synthetic_window(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for s in prob.states.iter_mut() {
            s.p += Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        }
        let total = total_cost(&prob);
        let mut manual = 0.0;
        for c in &prob.pims {
            let r = super::super::residuals::pim_residual(
                &prob.states[c.i],
                &prob.states[c.j],
                &c.pim,
                &prob.gravity,
            );
            manual += (pim_sqrt_info(&c.pim, &prob) * r).norm_squared();
        }
        for c in &prob.poses {
            let r = super::super::residuals::pose_residual(
                &prob.states[c.i],
                &prob.states[c.j],
                &c.meas,
                &prob.extrinsics,
            );
            manual += (pose_sqrt_info(&prob.pose_weights) * r).norm_squared();
        }
        approx::assert_relative_eq!(total, manual, epsilon = 1e-12);
    }

    #[test]
    fn start_at_ground_truth_is_stationary() {
        let (prob, truth) = synthetic_window(4, 5);
        let (states, report) = optimize_window(&prob, &OptimizeOptions::default()).unwrap();
        assert_eq!(report.accepted_steps, 0);
        assert_eq!(report.termination, Termination::GradientSmall);
        assert!(max_state_error(&states, &truth) < 1e-12);
        assert_eq!(report.initial_cost, report.final_cost);
    }

    #[test]
    fn recovers_perturbed_window() {
        for seed in 0..5 {
            let (mut prob, truth) = synthetic_window(20 + seed, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for s in prob.states.iter_mut().skip(1) {
                s.p += Vec3::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                );
                s.v += Vec3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                );
                let angle = rng.gen_range(0.0..(2.0f64).to_radians());
                let axis = Vec3::new(rng.gen(), rng.gen(), rng.gen()).normalize();
                s.q = s.q * so3_exp(&(axis * angle));
            }
            let (states, report) = optimize_window(&prob, &OptimizeOptions::default()).unwrap();
            assert!(
                max_state_error(&states, &truth) < 1e-6,
                "seed {seed}: error {}",
                max_state_error(&states, &truth)
            );
            assert!(report.iterations <= 30, "seed {seed}: {} iterations", report.iterations);
            for w in report.cost_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
        }
    }

    #[test]
    fn pim_only_window_reduces_to_chaining() {
        let (mut prob, truth) = synthetic_window(77, 5);
        prob.poses.clear();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in prob.states.iter_mut().skip(1) {
            s.p += Vec3::new(rng.gen_range(-0.1..0.1), 0.05, -0.02);
            s.v += Vec3::new(0.02, rng.gen_range(-0.05..0.05), 0.01);
        }
        let (states, _) = optimize_window(&prob, &OptimizeOptions::default()).unwrap();
        assert!(max_state_error(&states, &truth) < 1e-9);
    }

    #[test]
    fn gauge_shift_preserves_minimized_cost() {
        // Transform all states and all measurements by the same rigid pose
        // (gravity transformed consistently): minimized cost is unchanged.
        let (mut prob, _) = synthetic_window(9, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for s in prob.states.iter_mut().skip(1) {
            s.p += Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.05);
        }
        let (_, report_a) = optimize_window(&prob, &OptimizeOptions::default()).unwrap();

        let t0 = PoseSE3::from_parts(&Vec3::new(0.3, -0.2, 0.8), &Vec3::new(5.0, -2.0, 1.0));
        let mut shifted = prob.clone();
        for s in shifted.states.iter_mut() {
            let pose = t0 * PoseSE3::new(s.q, s.p);
            s.q = pose.rotation;
            s.p = pose.translation;
            s.v = t0.rotation.rotate(&s.v);
        }
        shifted.gravity = t0.rotation.rotate(&prob.gravity);
        let (_, report_b) = optimize_window(&shifted, &OptimizeOptions::default()).unwrap();
        assert!(
            (report_a.final_cost - report_b.final_cost).abs() < 1e-9,
            "{} vs {}",
            report_a.final_cost,
            report_b.final_cost
        );
    }

    #[test]
    fn validation_errors() {
        let noise = NoiseParams::noiseless();
        let prob = WindowProblem::new(vec![ImuState::at_rest(0.0)], &noise);
        assert!(matches!(prob.validate(), Err(OptimizerError::TooFewStates(1))));

        let (mut prob, _) = synthetic_window(5, 3);
        prob.pims[0].j = 7;
        assert!(matches!(prob.validate(), Err(OptimizerError::BadConstraintIndex { .. })));

        let (mut prob, _) = synthetic_window(5, 3);
        prob.pims.remove(0);
        assert!(matches!(prob.validate(), Err(OptimizerError::MissingPimConstraint { i: 0, j: 1 })));
    }

    #[test]
    fn update_after_optimization_cases() {
        let noise = NoiseParams::noiseless();
        let anchor = ImuState { t: 1.0, ..ImuState::at_rest(1.0) };
        // Empty buffer: anchor unchanged.
        let out = update_after_optimization_samples(&anchor, &[], &noise).unwrap();
        assert_eq!(out.p, anchor.p);
        assert_eq!(out.t, anchor.t);

        // Gyro-bias change at the anchor shifts yaw drift by ~dbg * t.
        let samples: Vec<ImuSample> = (0..=2000)
            .map(|k| ImuSample {
                t: 1.0 + k as f64 * 0.005,
                accel: Vec3::new(0.0, 0.0, 9.81),
                gyro: Vec3::zeros(),
            })
            .collect();
        let mut biased = anchor;
        let dbg = 1e-3;
        biased.bg = Vec3::new(0.0, 0.0, -dbg); // measured - bias => +dbg yaw rate
        let plain = update_after_optimization_samples(&anchor, &samples, &noise).unwrap();
        let drifted = update_after_optimization_samples(&biased, &samples, &noise).unwrap();
        let dyaw = log_unchecked(&(plain.q.inverse() * drifted.q)).z;
        approx::assert_relative_eq!(dyaw, dbg * 10.0, epsilon = 1e-5);
    }

    #[test]
    fn correction_transports_through_propagation() {
        let noise = NoiseParams::noiseless();
        let samples: Vec<ImuSample> = (0..=100)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample {
                    t,
                    accel: Vec3::new((4.0 * t).sin(), 0.2, 9.81),
                    gyro: Vec3::new(0.1, 0.0, 0.3),
                }
            })
            .collect();
        let anchor = ImuState::at_rest(0.0);
        let before = update_after_optimization_samples(&anchor, &samples, &noise).unwrap();

        // A pure translation correction at the anchor transports rigidly.
        let mut corrected = anchor;
        corrected.p += Vec3::new(0.1, -0.2, 0.05);
        let after = update_after_optimization_samples(&corrected, &samples, &noise).unwrap();
        approx::assert_relative_eq!(after.p - before.p, Vec3::new(0.1, -0.2, 0.05), epsilon = 1e-12);
        assert_eq!(after.v, before.v);
    }
}
