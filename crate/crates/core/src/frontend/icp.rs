//! Point-to-plane ICP with trimmed correspondences, tangential-pair
//! rejection and eigenvalue-truncated steps for degenerate geometry.

use super::map::SpatialGrid;
use crate::geometry::{skew, so3_exp, PoseSE3, Vec3};
use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Vec6 = SVector<f64, 6>;

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("no overlap: {found} correspondences after rejection (need {need})")]
    NoOverlap { found: usize, need: usize },
    #[error("numerical failure in ICP solve at iteration {iteration}")]
    NumericalFailure { iteration: usize },
    #[error("target cloud has no points with normals")]
    EmptyTarget,
}

#[derive(Debug, Clone, Copy)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Terminate once the parameter update norm drops below this.
    pub update_epsilon: f64,
    /// Correspondences farther than this are rejected, m.
    pub max_corr_dist: f64,
    /// Keep this fraction of correspondences (smallest plane residuals).
    pub trim_fraction: f64,
    /// Reject pairs whose displacement is long but nearly tangential to the
    /// target plane: |n·d| < tangent_cos · |d| with |d| above half the
    /// correspondence radius.
    pub tangent_cos: f64,
    pub min_correspondences: usize,
    /// Step components along Hessian eigendirections below this fraction of
    /// the largest eigenvalue are zeroed (no invented motion).
    pub degenerate_ratio: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 50,
            update_epsilon: 1e-6,
            max_corr_dist: 1.0,
            trim_fraction: 0.9,
            tangent_cos: 0.1,
            min_correspondences: 20,
            degenerate_ratio: 1e-5,
        }
    }
}

/// Fixed registration target: points with normals plus a search grid.
#[derive(Debug)]
pub struct TargetCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    grid: SpatialGrid,
}

impl TargetCloud {
    pub fn new(pairs: impl Iterator<Item = (Vec3, Vec3)>, max_corr_dist: f64) -> Result<Self, IcpError> {
        let collected: Vec<(Vec3, Vec3)> = pairs.collect();
        if collected.is_empty() {
            return Err(IcpError::EmptyTarget);
        }
        let (grid, points) = SpatialGrid::build(collected.iter().map(|(p, _)| *p), max_corr_dist);
        let normals = collected.into_iter().map(|(_, n)| n).collect();
        Ok(TargetCloud { points, normals, grid })
    }

    fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.grid.nearest(&self.points, q)
    }
}

#[derive(Debug, Clone)]
pub struct IcpDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Point-to-plane RMS at each accepted iteration (non-increasing).
    pub rms_history: Vec<f64>,
    /// RMS at the last accepted iteration, m.
    pub rms: f64,
    pub correspondences: usize,
    /// Gauss-Newton Hessian from the last accepted iteration, rows/cols
    /// ordered (translation, rotation).
    pub hessian: Mat6,
    /// Its eigenvalues, ascending.
    pub eigenvalues: Vec6,
    /// Eigenvectors matching `eigenvalues` (columns).
    pub eigenvectors: Mat6,
    /// Number of step directions truncated as degenerate in the last solve.
    pub truncated_directions: usize,
}

struct Correspondence {
    src: Vec3,
    tgt: Vec3,
    normal: Vec3,
    residual: f64,
}

fn associate(source: &[Vec3], target: &TargetCloud, pose: &PoseSE3, params: &IcpParams) -> Vec<Correspondence> {
    let mut pairs = Vec::with_capacity(source.len());
    for p in source {
        let q = pose.transform_point(p);
        let Some((idx, d2)) = target.nearest(&q) else { continue };
        let disp = q - target.points[idx];
        let n = target.normals[idx];
        let res = n.dot(&disp);
        let d = d2.sqrt();
        if d > 0.5 * params.max_corr_dist && res.abs() < params.tangent_cos * d {
            // Long, nearly tangential displacement: sliding mismatch.
            continue;
        }
        pairs.push(Correspondence { src: *p, tgt: target.points[idx], normal: n, residual: res });
    }
    // Trim to the best fraction by |plane residual|; deterministic order.
    let keep = ((pairs.len() as f64) * params.trim_fraction).ceil() as usize;
    if keep < pairs.len() {
        pairs.sort_unstable_by(|a, b| {
            a.residual.abs().partial_cmp(&b.residual.abs()).unwrap().then(a.src.x.partial_cmp(&b.src.x).unwrap())
        });
        pairs.truncate(keep);
    }
    pairs
}

fn rms_of(pairs: &[Correspondence]) -> f64 {
    (pairs.iter().map(|c| c.residual * c.residual).sum::<f64>() / pairs.len() as f64).sqrt()
}

/// Minimize the summed squared point-to-plane distance of `source` against
/// `target` by iterated linearization, starting from `t_init`.
///
/// The step is solved in the eigenbasis of the 6x6 Gauss-Newton Hessian and
/// components along near-null directions are zeroed, so degenerate geometry
/// (e.g. a corridor) never produces motion the points do not constrain.
pub fn icp_point_to_plane(
    source: &[Vec3],
    target: &TargetCloud,
    t_init: &PoseSE3,
    params: &IcpParams,
) -> Result<(PoseSE3, IcpDiagnostics), IcpError> {
    let mut pose = *t_init;
    let mut prev_pose = pose;
    let mut diag = IcpDiagnostics {
        iterations: 0,
        converged: false,
        rms_history: Vec::new(),
        rms: f64::INFINITY,
        correspondences: 0,
        hessian: Mat6::zeros(),
        eigenvalues: Vec6::zeros(),
        eigenvectors: Mat6::zeros(),
        truncated_directions: 0,
    };
    let mut prev_rms = f64::INFINITY;

    for iter in 0..params.max_iterations {
        diag.iterations = iter + 1;
        let pairs = associate(source, target, &pose, params);
        if pairs.len() < params.min_correspondences {
            return Err(IcpError::NoOverlap { found: pairs.len(), need: params.min_correspondences });
        }
        let rms = rms_of(&pairs);
        if rms > prev_rms + 1e-12 {
            // Revert the step that made things worse and stop at the last
            // accepted pose; history stays monotone.
            pose = prev_pose;
            diag.converged = true;
            break;
        }
        prev_rms = rms;
        diag.rms_history.push(rms);
        diag.rms = rms;
        diag.correspondences = pairs.len();

        // Normal equations for δ = (δt, δθ), residual n·(R p + t - q).
        let rot = pose.rotation_matrix();
        let mut h = Mat6::zeros();
        let mut g = Vec6::zeros();
        for c in &pairs {
            let mut j = Vec6::zeros();
            j.fixed_rows_mut::<3>(0).copy_from(&c.normal);
            j.fixed_rows_mut::<3>(3).copy_from(&(-(rot * skew(&c.src)).transpose() * c.normal));
            h += j * j.transpose();
            g += j * c.residual;
        }
        let eig = nalgebra::SymmetricEigen::new(h);
        let mut order = [0usize, 1, 2, 3, 4, 5];
        order.sort_unstable_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        diag.hessian = h;
        for (slot, &k) in order.iter().enumerate() {
            diag.eigenvalues[slot] = eig.eigenvalues[k];
            diag.eigenvectors.set_column(slot, &eig.eigenvectors.column(k));
        }
        let lambda_max = diag.eigenvalues[5].abs();
        if !lambda_max.is_finite() {
            return Err(IcpError::NumericalFailure { iteration: iter });
        }

        // Truncated solve in the eigenbasis.
        let mut delta = Vec6::zeros();
        let mut truncated = 0usize;
        for k in 0..6 {
            let ev = diag.eigenvalues[k];
            let v = diag.eigenvectors.column(k);
            if ev <= params.degenerate_ratio * lambda_max || ev <= 0.0 {
                truncated += 1;
                continue;
            }
            let coeff = -(v.dot(&g)) / ev;
            delta += v * coeff;
        }
        diag.truncated_directions = truncated;
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(IcpError::NumericalFailure { iteration: iter });
        }

        prev_pose = pose;
        let dt = Vec3::new(delta[0], delta[1], delta[2]);
        let dth = Vec3::new(delta[3], delta[4], delta[5]);
        pose = PoseSE3::new(pose.rotation * so3_exp(&dth), pose.translation + dt);

        if delta.norm() < params.update_epsilon {
            diag.converged = true;
            break;
        }
    }
    Ok((pose, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Axis-aligned room shell sampled on a grid, with inward normals.
    pub(crate) fn room_cloud(step: f64) -> Vec<(Vec3, Vec3)> {
        let (hx, hy, hz) = (4.0, 3.0, 1.5);
        let mut out = Vec::new();
        let mut push_face = |origin: Vec3, du: Vec3, dv: Vec3, nu: usize, nv: usize, n: Vec3| {
            for i in 0..nu {
                for j in 0..nv {
                    out.push((origin + du * (i as f64) + dv * (j as f64), n));
                }
            }
        };
        let nx = (2.0 * hx / step) as usize;
        let ny = (2.0 * hy / step) as usize;
        let nz = (2.0 * hz / step) as usize;
        // walls
        push_face(Vec3::new(-hx, -hy, -hz), Vec3::new(step, 0.0, 0.0), Vec3::new(0.0, 0.0, step), nx, nz, Vec3::new(0.0, 1.0, 0.0));
        push_face(Vec3::new(-hx, hy, -hz), Vec3::new(step, 0.0, 0.0), Vec3::new(0.0, 0.0, step), nx, nz, Vec3::new(0.0, -1.0, 0.0));
        push_face(Vec3::new(-hx, -hy, -hz), Vec3::new(0.0, step, 0.0), Vec3::new(0.0, 0.0, step), ny, nz, Vec3::new(1.0, 0.0, 0.0));
        push_face(Vec3::new(hx, -hy, -hz), Vec3::new(0.0, step, 0.0), Vec3::new(0.0, 0.0, step), ny, nz, Vec3::new(-1.0, 0.0, 0.0));
        // floor + ceiling
        push_face(Vec3::new(-hx, -hy, -hz), Vec3::new(step, 0.0, 0.0), Vec3::new(0.0, step, 0.0), nx, ny, Vec3::new(0.0, 0.0, 1.0));
        push_face(Vec3::new(-hx, -hy, hz), Vec3::new(step, 0.0, 0.0), Vec3::new(0.0, step, 0.0), nx, ny, Vec3::new(0.0, 0.0, -1.0));
        out
    }

    #[test]
    fn identity_on_identical_clouds() {
        let cloud = room_cloud(0.25);
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let source: Vec<Vec3> = cloud.iter().map(|(p, _)| *p).collect();
        let (pose, diag) =
            icp_point_to_plane(&source, &target, &PoseSE3::identity(), &IcpParams::default()).unwrap();
        assert!(pose.translation.norm() < 1e-9);
        assert!(pose.rotation.angle() < 1e-9);
        assert!(diag.converged);
    }

    #[test]
    fn recovers_known_transform() {
        let cloud = room_cloud(0.2);
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let truth = PoseSE3::new(
            so3_exp(&Vec3::new(0.0, 0.0, 5.0f64.to_radians())),
            Vec3::new(0.15, -0.1, 0.08),
        );
        // Source observed in a frame displaced by `truth`.
        let source: Vec<Vec3> = cloud.iter().map(|(p, _)| truth.inverse().transform_point(p)).collect();
        let (pose, diag) =
            icp_point_to_plane(&source, &target, &PoseSE3::identity(), &IcpParams::default()).unwrap();
        assert!(diag.converged);
        let err = truth.between(&pose);
        assert!(err.translation.norm() < 1e-3, "translation error {}", err.translation.norm());
        assert!(err.rotation.angle().to_degrees() < 0.1);
    }

    #[test]
    fn rms_history_is_monotone() {
        let cloud = room_cloud(0.2);
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let truth = PoseSE3::new(so3_exp(&Vec3::new(0.0, 0.0, 0.1)), Vec3::new(0.2, 0.1, 0.0));
        let source: Vec<Vec3> = cloud.iter().map(|(p, _)| truth.inverse().transform_point(p)).collect();
        let (_, diag) =
            icp_point_to_plane(&source, &target, &PoseSE3::identity(), &IcpParams::default()).unwrap();
        for w in diag.rms_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn initial_guess_within_basin_lands_on_same_pose() {
        let cloud = room_cloud(0.2);
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let truth = PoseSE3::new(so3_exp(&Vec3::new(0.02, 0.0, 0.08)), Vec3::new(0.1, 0.05, -0.04));
        let source: Vec<Vec3> = cloud.iter().map(|(p, _)| truth.inverse().transform_point(p)).collect();
        let params = IcpParams::default();
        let (pose_a, _) = icp_point_to_plane(&source, &target, &PoseSE3::identity(), &params).unwrap();
        let nudge = PoseSE3::new(
            so3_exp(&Vec3::new(0.0, 1.0f64.to_radians(), 0.0)),
            Vec3::new(0.05, 0.0, -0.02),
        );
        let (pose_b, _) = icp_point_to_plane(&source, &target, &(pose_a * nudge), &params).unwrap();
        let d = pose_a.between(&pose_b);
        assert!(d.translation.norm() < 2.0 * params.update_epsilon * 10.0);
        assert!(d.rotation.angle() < 2.0 * params.update_epsilon * 10.0);
    }

    #[test]
    fn two_parallel_walls_are_degenerate() {
        // Walls at y = ±2, extending in x and z: translation along x and z
        // and rotations about x/z are unconstrained combinations; the
        // clearest null direction is x-translation (corridor axis).
        let mut cloud = Vec::new();
        let step = 0.15;
        for i in 0..60 {
            for j in 0..20 {
                let (x, z) = (i as f64 * step - 4.5, j as f64 * step - 1.5);
                cloud.push((Vec3::new(x, -2.0, z), Vec3::new(0.0, 1.0, 0.0)));
                cloud.push((Vec3::new(x, 2.0, z), Vec3::new(0.0, -1.0, 0.0)));
            }
        }
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let source: Vec<Vec3> = cloud.iter().map(|(p, _)| *p).collect();
        let t_init = PoseSE3::identity();
        let (pose, diag) = icp_point_to_plane(&source, &target, &t_init, &IcpParams::default()).unwrap();

        let ratio = diag.eigenvalues[0].abs() / diag.eigenvalues[5].abs();
        assert!(ratio < 1e-3, "min/max eigenvalue ratio {ratio}");
        assert!(diag.truncated_directions >= 1);

        // No invented motion along the null directions.
        let delta_t = pose.translation - t_init.translation;
        let delta_r = crate::geometry::so3_log(&(t_init.rotation.inverse() * pose.rotation)).unwrap();
        let mut delta = Vec6::zeros();
        delta.fixed_rows_mut::<3>(0).copy_from(&delta_t);
        delta.fixed_rows_mut::<3>(3).copy_from(&delta_r);
        for k in 0..6 {
            if diag.eigenvalues[k] <= 1e-5 * diag.eigenvalues[5] {
                let along = diag.eigenvectors.column(k).dot(&delta).abs();
                assert!(along < 1e-6, "moved {along} along a null direction");
            }
        }
    }

    #[test]
    fn no_overlap_is_reported() {
        let cloud = room_cloud(0.3);
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let far: Vec<Vec3> = (0..50).map(|k| Vec3::new(100.0 + k as f64, 0.0, 0.0)).collect();
        let err = icp_point_to_plane(&far, &target, &PoseSE3::identity(), &IcpParams::default());
        assert!(matches!(err, Err(IcpError::NoOverlap { .. })));
    }

    #[test]
    fn perturbed_convergence_from_random_inits() {
        let cloud = room_cloud(0.25);
        let target = TargetCloud::new(cloud.iter().copied(), 1.0).unwrap();
        let source: Vec<Vec3> = cloud.iter().map(|(p, _)| *p).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let init = PoseSE3::new(
                so3_exp(&Vec3::new(0.0, 0.0, rng.gen_range(-0.05..0.05))),
                Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
            );
            let (pose, diag) = icp_point_to_plane(&source, &target, &init, &IcpParams::default()).unwrap();
            assert!(diag.converged);
            assert!(pose.translation.norm() < 1e-6, "residual offset {}", pose.translation.norm());
            assert!(pose.rotation.angle() < 1e-6);
        }
        let _ = UnitQuat::identity();
    }
}
