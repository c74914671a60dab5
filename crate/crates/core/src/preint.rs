//! IMU pre-integration: batches of samples between two LiDAR timestamps
//! collapsed into one relative motion increment.
//!
//! Increments are expressed in the frame of the first IMU pose and exclude
//! gravity; [`pim_predict`] re-adds it. The per-sample update mirrors
//! [`crate::imu::propagate_state`] exactly, so predicting through a `Pim`
//! reproduces direct propagation to floating-point roundoff. Bias Jacobians
//! are the exact first derivatives of the discrete scheme, maintained
//! incrementally.

use crate::geometry::{
    quat_to_rotmat, right_jacobian, skew, so3_exp, Mat3, UnitQuat, Vec3,
};
use crate::imu::{correct_measurement, ImuSample, ImuState, NoiseParams, Segment};
use nalgebra::SMatrix;
use thiserror::Error;

pub type Cov9 = SMatrix<f64, 9, 9>;
pub type BiasJacobian = SMatrix<f64, 9, 6>;

#[derive(Debug, Error)]
pub enum PreintError {
    #[error("pre-integration step dt={0} must be positive")]
    NonPositiveDt(f64),
}

/// Pre-integrated motion increment between two timestamps.
///
/// Rows of the 9x9 covariance and the 9x6 bias Jacobian are ordered
/// `(δp, δv, δθ)`; Jacobian columns are `(b_a, b_g)`.
#[derive(Debug, Clone)]
pub struct Pim {
    /// Position increment in the first IMU frame, m.
    pub delta_p: Vec3,
    /// Velocity increment in the first IMU frame, m/s.
    pub delta_v: Vec3,
    /// Rotation increment, first frame to last frame.
    pub delta_q: UnitQuat,
    /// Integrated duration, s.
    pub delta_t: f64,
    /// Increment noise covariance.
    pub cov: Cov9,
    /// Accelerometer bias at the linearization point.
    pub ba_lin: Vec3,
    /// Gyro bias at the linearization point.
    pub bg_lin: Vec3,
    j_p_ba: Mat3,
    j_p_bg: Mat3,
    j_v_ba: Mat3,
    j_v_bg: Mat3,
    /// d(log ΔR)/d(b_g): ΔR(b+δ) ≈ ΔR exp(j_r_bg δ).
    j_r_bg: Mat3,
}

impl Pim {
    /// Identity increment linearized at the given biases.
    pub fn new(ba_lin: Vec3, bg_lin: Vec3) -> Self {
        Pim {
            delta_p: Vec3::zeros(),
            delta_v: Vec3::zeros(),
            delta_q: UnitQuat::identity(),
            delta_t: 0.0,
            cov: Cov9::zeros(),
            ba_lin,
            bg_lin,
            j_p_ba: Mat3::zeros(),
            j_p_bg: Mat3::zeros(),
            j_v_ba: Mat3::zeros(),
            j_v_bg: Mat3::zeros(),
            j_r_bg: Mat3::zeros(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.delta_t == 0.0
    }

    /// Stacked 9x6 bias Jacobian, rows `(δp, δv, δθ)`, columns `(b_a, b_g)`.
    pub fn bias_jacobian(&self) -> BiasJacobian {
        let mut j = BiasJacobian::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.j_p_ba);
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.j_p_bg);
        j.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.j_v_ba);
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.j_v_bg);
        j.fixed_view_mut::<3, 3>(6, 3).copy_from(&self.j_r_bg);
        j
    }

    pub fn rotation_bias_jacobian(&self) -> Mat3 {
        self.j_r_bg
    }
}

/// Fold one sample (constant over `dt`) into the increment.
pub fn pim_integrate(pim: &Pim, s: &ImuSample, dt: f64, n: &NoiseParams) -> Result<Pim, PreintError> {
    if dt <= 0.0 {
        return Err(PreintError::NonPositiveDt(dt));
    }
    let (a, w) = correct_measurement(s, &pim.ba_lin, &pim.bg_lin);
    let half_phi = w * (0.5 * dt);
    let full_phi = w * dt;
    let r_k = quat_to_rotmat(&pim.delta_q);
    let r_half = quat_to_rotmat(&so3_exp(&half_phi));
    let r_mid = r_k * r_half;
    let r_full_t = quat_to_rotmat(&so3_exp(&full_phi)).transpose();
    let jr_half = right_jacobian(&half_phi);
    let jr_full = right_jacobian(&full_phi);
    let acc_mid = r_mid * a;

    let mut out = pim.clone();
    out.delta_p = pim.delta_p + pim.delta_v * dt + acc_mid * (0.5 * dt * dt);
    out.delta_v = pim.delta_v + acc_mid * dt;
    out.delta_q = pim.delta_q * so3_exp(&full_phi);
    out.delta_t = pim.delta_t + dt;

    // d(R_mid a)/d(b_g), exact for the discrete scheme: the accumulated
    // rotation contributes through j_r_bg transported to the half step.
    let d_half = r_half.transpose() * pim.j_r_bg - jr_half * (0.5 * dt);
    let h = -r_mid * skew(&a) * d_half;

    out.j_p_ba = pim.j_p_ba + pim.j_v_ba * dt - r_mid * (0.5 * dt * dt);
    out.j_p_bg = pim.j_p_bg + pim.j_v_bg * dt + h * (0.5 * dt * dt);
    out.j_v_ba = pim.j_v_ba - r_mid * dt;
    out.j_v_bg = pim.j_v_bg + h * dt;
    out.j_r_bg = r_full_t * pim.j_r_bg - jr_full * dt;

    // Error-state transition for the increment covariance, order (δp, δv, δθ).
    let a_vtheta = -r_k * skew(&r_half * a) * dt;
    let mut f = Cov9::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Mat3::identity() * dt));
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(a_vtheta * (0.5 * dt)));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&a_vtheta);
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&r_full_t);

    let sa = Mat3::from_diagonal(&n.sigma_na.map(|v| v * v));
    let sw = Mat3::from_diagonal(&n.sigma_nw.map(|v| v * v));
    let mut q = Cov9::zeros();
    q.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(r_mid * sa * r_mid.transpose() * (0.25 * dt * dt * dt)));
    q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r_mid * sa * r_mid.transpose() * dt));
    q.fixed_view_mut::<3, 3>(6, 6).copy_from(&(jr_full * sw * jr_full.transpose() * dt));

    let cov = f * pim.cov * f.transpose() + q;
    out.cov = (cov + cov.transpose()) * 0.5;
    Ok(out)
}

/// Integrate a whole run of stream segments.
pub fn pim_integrate_segments(pim: Pim, segs: &[Segment], n: &NoiseParams) -> Result<Pim, PreintError> {
    let mut out = pim;
    for seg in segs {
        out = pim_integrate(&out, &seg.sample, seg.dt, n)?;
    }
    Ok(out)
}

/// First-order bias correction through the stored Jacobians, without
/// re-integration. The linearization point moves with the correction.
pub fn pim_correct_bias(pim: &Pim, dba: &Vec3, dbg: &Vec3) -> Pim {
    if dba.norm() > 0.1 || dbg.norm() > 0.1 {
        log::warn!(
            "pim_correct_bias outside first-order regime: |dba|={:.3}, |dbg|={:.3}",
            dba.norm(),
            dbg.norm()
        );
    }
    let mut out = pim.clone();
    out.delta_p = pim.delta_p + pim.j_p_ba * dba + pim.j_p_bg * dbg;
    out.delta_v = pim.delta_v + pim.j_v_ba * dba + pim.j_v_bg * dbg;
    out.delta_q = pim.delta_q * so3_exp(&(pim.j_r_bg * dbg));
    out.ba_lin = pim.ba_lin + dba;
    out.bg_lin = pim.bg_lin + dbg;
    out
}

/// Invert the increment relative to a start state: the state at the end of
/// the batch under the same gravity vector used by direct propagation.
pub fn pim_predict(x_i: &ImuState, pim: &Pim, gravity: &Vec3) -> (Vec3, Vec3, UnitQuat) {
    let dt = pim.delta_t;
    let p_j = x_i.p + x_i.v * dt - gravity * (0.5 * dt * dt) + x_i.q.rotate(&pim.delta_p);
    let v_j = x_i.v - gravity * dt + x_i.q.rotate(&pim.delta_v);
    let q_j = x_i.q * pim.delta_q;
    (p_j, v_j, q_j)
}
