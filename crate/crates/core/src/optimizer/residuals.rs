//! Residuals of the sliding-window problem and their analytic Jacobians.
//!
//! Local coordinates per state are `(δp, δv, δθ, δb_a, δb_g)` with right
//! rotation perturbations, matching the IMU error state. Jacobians are
//! validated against central finite differences in the acceptance suite.

use crate::geometry::{
    log_unchecked, quat_to_rotmat, right_jacobian, right_jacobian_inv, skew, Mat3, UnitQuat, Vec3,
};
use crate::imu::ImuState;
use crate::preint::Pim;
use nalgebra::{SMatrix, SVector};

pub type Vec15 = SVector<f64, 15>;
pub type Vec6 = SVector<f64, 6>;
pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Mat6x15 = SMatrix<f64, 6, 15>;

/// Fixed LiDAR-to-IMU rigid transform.
#[derive(Debug, Clone, Copy)]
pub struct Extrinsics {
    /// Rotation from the LiDAR frame to the IMU frame.
    pub q_il: UnitQuat,
    /// LiDAR origin in the IMU frame, m.
    pub p_il: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Extrinsics { q_il: UnitQuat::identity(), p_il: Vec3::zeros() }
    }
}

/// Pre-integration residual, rows `(δp, δv, δθ, δb_a, δb_g)`.
///
/// The increment is corrected to state `i`'s biases through the stored
/// Jacobians, so the residual is differentiable in them. Position and
/// rotation rows live in frame `i`; the velocity row is expressed in the
/// world frame.
pub fn pim_residual(x_i: &ImuState, x_j: &ImuState, pim: &Pim, gravity: &Vec3) -> Vec15 {
    let (r, _, _) = pim_residual_jacobians(x_i, x_j, pim, gravity);
    r
}

/// Residual plus Jacobians w.r.t. the local coordinates of states `i` and `j`.
pub fn pim_residual_jacobians(
    x_i: &ImuState,
    x_j: &ImuState,
    pim: &Pim,
    gravity: &Vec3,
) -> (Vec15, Mat15, Mat15) {
    let dt = pim.delta_t;
    let dba = x_i.ba - pim.ba_lin;
    let dbg = x_i.bg - pim.bg_lin;
    let j = pim.bias_jacobian();
    let (j_p_ba, j_p_bg) = (j.fixed_view::<3, 3>(0, 0), j.fixed_view::<3, 3>(0, 3));
    let (j_v_ba, j_v_bg) = (j.fixed_view::<3, 3>(3, 0), j.fixed_view::<3, 3>(3, 3));
    let d_rot = pim.rotation_bias_jacobian();

    let dp_corr = pim.delta_p + j_p_ba * dba + j_p_bg * dbg;
    let dv_corr = pim.delta_v + j_v_ba * dba + j_v_bg * dbg;
    let rot_corr_arg = d_rot * dbg;
    let dq_corr = pim.delta_q * crate::geometry::so3_exp(&rot_corr_arg);

    let r_i = x_i.rotation_matrix();
    let r_j = x_j.rotation_matrix();

    let s = x_j.p - x_i.p - x_i.v * dt + gravity * (0.5 * dt * dt);
    let w = x_j.v - x_i.v + gravity * dt;
    let e_q = dq_corr.inverse() * (x_i.q.inverse() * x_j.q);
    let r_theta = log_unchecked(&e_q);

    let mut r = Vec15::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&(r_i.transpose() * s - dp_corr));
    r.fixed_rows_mut::<3>(3).copy_from(&(w - r_i * dv_corr));
    r.fixed_rows_mut::<3>(6).copy_from(&r_theta);
    r.fixed_rows_mut::<3>(9).copy_from(&(x_j.ba - x_i.ba));
    r.fixed_rows_mut::<3>(12).copy_from(&(x_j.bg - x_i.bg));

    let jr_inv = right_jacobian_inv(&r_theta);
    let e_mat = quat_to_rotmat(&e_q);
    let i3 = Mat3::identity();

    let mut ji = Mat15::zeros();
    // r_p rows
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r_i.transpose()));
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r_i.transpose() * dt));
    ji.fixed_view_mut::<3, 3>(0, 6).copy_from(&skew(&(r_i.transpose() * s)));
    ji.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-j_p_ba));
    ji.fixed_view_mut::<3, 3>(0, 12).copy_from(&(-j_p_bg));
    // r_v rows
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-i3));
    ji.fixed_view_mut::<3, 3>(3, 6).copy_from(&(r_i * skew(&dv_corr)));
    ji.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-r_i * j_v_ba));
    ji.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-r_i * j_v_bg));
    // r_theta rows
    ji.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-jr_inv * r_j.transpose() * r_i));
    ji.fixed_view_mut::<3, 3>(6, 12)
        .copy_from(&(-jr_inv * e_mat.transpose() * right_jacobian(&rot_corr_arg) * d_rot));
    // bias rows
    ji.fixed_view_mut::<3, 3>(9, 9).copy_from(&(-i3));
    ji.fixed_view_mut::<3, 3>(12, 12).copy_from(&(-i3));

    let mut jj = Mat15::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_i.transpose());
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&i3);
    jj.fixed_view_mut::<3, 3>(6, 6).copy_from(&jr_inv);
    jj.fixed_view_mut::<3, 3>(9, 9).copy_from(&i3);
    jj.fixed_view_mut::<3, 3>(12, 12).copy_from(&i3);

    (r, ji, jj)
}

/// Relative LiDAR pose measured between the scans at states `i` and `j`.
#[derive(Debug, Clone, Copy)]
pub struct RelativePoseMeas {
    /// Rotation of frame `L_j` relative to `L_i`.
    pub q: UnitQuat,
    /// Translation of `L_j` expressed in `L_i`, m.
    pub t: Vec3,
}

/// Pose re-projection residual: the measured relative LiDAR pose minus the
/// one induced by the two IMU states through the extrinsics. Rows are
/// `(translation, 2·vec(q̂⁻¹ ⊗ q))` with a shortest-arc sign fix.
pub fn pose_residual(x_i: &ImuState, x_j: &ImuState, meas: &RelativePoseMeas, ext: &Extrinsics) -> Vec6 {
    let (r, _, _) = pose_residual_jacobians(x_i, x_j, meas, ext);
    r
}

pub fn pose_residual_jacobians(
    x_i: &ImuState,
    x_j: &ImuState,
    meas: &RelativePoseMeas,
    ext: &Extrinsics,
) -> (Vec6, Mat6x15, Mat6x15) {
    let r_i = x_i.rotation_matrix();
    let r_j = x_j.rotation_matrix();
    let r_il = quat_to_rotmat(&ext.q_il);

    // LiDAR poses induced by the states: T_w_Lk = T_w_Ik ∘ T_IL.
    let q_wl_i = x_i.q * ext.q_il;
    let p_wl_i = x_i.p + x_i.q.rotate(&ext.p_il);
    let q_wl_j = x_j.q * ext.q_il;
    let p_wl_j = x_j.p + x_j.q.rotate(&ext.p_il);

    let d = p_wl_j - p_wl_i;
    let t_hat = q_wl_i.rotate_inv(&d);
    let q_hat = q_wl_i.inverse() * q_wl_j;

    // Shortest arc: products canonicalize to w >= 0, but make it explicit for
    // the Jacobian terms that reuse (e_w, e_v).
    let e = q_hat.inverse() * meas.q;
    let (e_w, e_v) = if e.w() >= 0.0 { (e.w(), e.vec()) } else { (-e.w(), -e.vec()) };

    let mut r = Vec6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&(meas.t - t_hat));
    r.fixed_rows_mut::<3>(3).copy_from(&(e_v * 2.0));

    // dt̂/dθ_i = R_ILᵀ([R_iᵀ d]× + [p_IL]×); residual rows negate it.
    let dt_dtheta_i = r_il.transpose() * (skew(&(r_i.transpose() * d)) + skew(&ext.p_il));
    let dt_dtheta_j = -(quat_to_rotmat(&q_wl_i).transpose()) * r_j * skew(&ext.p_il);

    let drq_dtheta_i = (Mat3::identity() * e_w - skew(&e_v)) * r_il.transpose() * r_j.transpose() * r_i;
    let drq_dtheta_j = (-Mat3::identity() * e_w + skew(&e_v)) * r_il.transpose();

    let r_wl_i_t = quat_to_rotmat(&q_wl_i).transpose();
    let mut ji = Mat6x15::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_wl_i_t);
    ji.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-dt_dtheta_i));
    ji.fixed_view_mut::<3, 3>(3, 6).copy_from(&drq_dtheta_i);

    let mut jj = Mat6x15::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r_wl_i_t));
    jj.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-dt_dtheta_j));
    jj.fixed_view_mut::<3, 3>(3, 6).copy_from(&drq_dtheta_j);

    (r, ji, jj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{so3_exp, PoseSE3};
    use crate::imu::{stream_segments, ImuSample, ImuState, NoiseParams};
    use crate::preint::{pim_integrate_segments, pim_predict, Pim};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn consistent_pair(seed: u64) -> (ImuState, ImuState, Pim, Vec3) {
        let n = NoiseParams::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<ImuSample> = (0..=20)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample {
                    t,
                    accel: Vec3::new((3.0 * t).sin(), 0.4, 9.81 + 0.2 * (t * 5.0).cos()),
                    gyro: Vec3::new(0.2, -0.3 * (4.0 * t).sin(), 0.5),
                }
            })
            .collect();
        let segs = stream_segments(&samples, 0.0, 0.1).unwrap();
        let x_i = ImuState {
            p: Vec3::new(rng.gen_range(-1.0..1.0), 0.2, 0.0),
            v: Vec3::new(0.5, rng.gen_range(-0.5..0.5), 0.1),
            q: so3_exp(&Vec3::new(0.1, rng.gen_range(-0.3..0.3), 0.4)),
            ..ImuState::at_rest(0.0)
        };
        let pim = pim_integrate_segments(Pim::new(x_i.ba, x_i.bg), &segs, &n).unwrap();
        let (p_j, v_j, q_j) = pim_predict(&x_i, &pim, &n.gravity);
        let x_j = ImuState { t: 0.1, p: p_j, v: v_j, q: q_j, ..x_i };
        (x_i, x_j, pim, n.gravity)
    }

    #[test]
    fn consistent_states_give_zero_pim_residual() {
        let (x_i, x_j, pim, g) = consistent_pair(1);
        let r = pim_residual(&x_i, &x_j, &pim, &g);
        assert!(r.norm() < 1e-9, "residual {}", r.norm());
    }

    #[test]
    fn position_perturbation_maps_through_r_i() {
        let (x_i, x_j, pim, g) = consistent_pair(2);
        let r0 = pim_residual(&x_i, &x_j, &pim, &g);
        let mut x_j2 = x_j;
        x_j2.p += Vec3::new(0.1, 0.0, 0.0);
        let r1 = pim_residual(&x_i, &x_j2, &pim, &g);
        let dp = (r1 - r0).fixed_rows::<3>(0).into_owned();
        let expect = x_i.rotation_matrix().transpose() * Vec3::new(0.1, 0.0, 0.0);
        assert_relative_eq!(dp, expect, epsilon = 1e-9);
        assert!((r1 - r0).fixed_rows::<12>(3).norm() < 1e-9);
    }

    #[test]
    fn later_bias_perturbation_hits_only_bias_rows() {
        let (x_i, x_j, pim, g) = consistent_pair(3);
        let r0 = pim_residual(&x_i, &x_j, &pim, &g);
        let mut x_j2 = x_j;
        let eps = Vec3::new(1e-3, -2e-3, 5e-4);
        x_j2.ba += eps;
        let r1 = pim_residual(&x_i, &x_j2, &pim, &g);
        assert_relative_eq!((r1 - r0).fixed_rows::<3>(9).into_owned(), eps, epsilon = 1e-12);
        assert!((r1 - r0).fixed_rows::<9>(0).norm() < 1e-12);
        assert!((r1 - r0).fixed_rows::<3>(12).norm() < 1e-12);
    }

    #[test]
    fn consistent_relative_pose_gives_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let ext = Extrinsics {
                q_il: so3_exp(&Vec3::new(rng.gen_range(-0.3..0.3), 0.1, -0.2)),
                p_il: Vec3::new(0.1, 0.0, 0.05),
            };
            let x_i = ImuState {
                p: Vec3::new(rng.gen_range(-2.0..2.0), 1.0, 0.3),
                q: so3_exp(&Vec3::new(0.2, rng.gen_range(-0.5..0.5), 0.7)),
                ..ImuState::at_rest(0.0)
            };
            let x_j = ImuState {
                p: Vec3::new(0.5, rng.gen_range(-2.0..2.0), -0.1),
                q: so3_exp(&Vec3::new(-0.1, 0.3, rng.gen_range(-0.5..0.5))),
                ..ImuState::at_rest(0.0)
            };
            let t_i = PoseSE3::new(x_i.q, x_i.p).compose(&PoseSE3::new(ext.q_il, ext.p_il));
            let t_j = PoseSE3::new(x_j.q, x_j.p).compose(&PoseSE3::new(ext.q_il, ext.p_il));
            let rel = t_i.between(&t_j);
            let meas = RelativePoseMeas { q: rel.rotation, t: rel.translation };
            let r = pose_residual(&x_i, &x_j, &meas, &ext);
            assert!(r.norm() < 1e-9);
        }
    }

    #[test]
    fn identity_extrinsics_reduce_to_imu_relative_pose() {
        let ext = Extrinsics::default();
        let x_i = ImuState {
            p: Vec3::new(1.0, 2.0, 3.0),
            q: so3_exp(&Vec3::new(0.0, 0.0, 0.9)),
            ..ImuState::at_rest(0.0)
        };
        let x_j = ImuState {
            p: Vec3::new(1.5, 2.0, 3.2),
            q: so3_exp(&Vec3::new(0.0, 0.0, 1.1)),
            ..ImuState::at_rest(0.0)
        };
        let rel = PoseSE3::new(x_i.q, x_i.p).between(&PoseSE3::new(x_j.q, x_j.p));
        let meas = RelativePoseMeas { q: rel.rotation, t: rel.translation };
        let r = pose_residual(&x_i, &x_j, &meas, &ext);
        assert!(r.norm() < 1e-12);

        // Offset measurement shows up directly in the translation rows.
        let meas2 = RelativePoseMeas { q: rel.rotation, t: rel.translation + Vec3::new(0.1, 0.0, 0.0) };
        let r2 = pose_residual(&x_i, &x_j, &meas2, &ext);
        assert_relative_eq!(r2.fixed_rows::<3>(0).into_owned(), Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn lever_arm_matches_se3_chain_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let ext = Extrinsics {
                q_il: so3_exp(&Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                )),
                p_il: Vec3::new(0.1, rng.gen_range(-0.1..0.1), 0.05),
            };
            let mk = |rng: &mut ChaCha8Rng| ImuState {
                p: Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                q: so3_exp(&Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )),
                ..ImuState::at_rest(0.0)
            };
            let (x_i, x_j) = (mk(&mut rng), mk(&mut rng));
            let meas = RelativePoseMeas {
                q: so3_exp(&Vec3::new(0.2, -0.1, rng.gen_range(-1.0..1.0))),
                t: Vec3::new(rng.gen_range(-1.0..1.0), 0.3, -0.2),
            };
            let r = pose_residual(&x_i, &x_j, &meas, &ext);

            // Brute-force oracle through full SE(3) chains.
            let t_ext = PoseSE3::new(ext.q_il, ext.p_il);
            let t_li = PoseSE3::new(x_i.q, x_i.p) * t_ext;
            let t_lj = PoseSE3::new(x_j.q, x_j.p) * t_ext;
            let pred = t_li.between(&t_lj);
            let expect_t = meas.t - pred.translation;
            let e = pred.rotation.inverse() * meas.q;
            let expect_r = if e.w() >= 0.0 { e.vec() * 2.0 } else { e.vec() * -2.0 };
            assert_relative_eq!(r.fixed_rows::<3>(0).into_owned(), expect_t, epsilon = 1e-12);
            assert_relative_eq!(r.fixed_rows::<3>(3).into_owned(), expect_r, epsilon = 1e-12);
        }
    }
}
