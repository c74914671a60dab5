//! Quaternion, rotation and SE(3) primitives shared by every other module.
//!
//! Conventions, pinned once for the whole crate:
//!
//! * Quaternions are Hamilton (`ij = k`), stored as `(w, x, y, z)`.
//! * `R(a ⊗ b) = R(a) · R(b)`; a state quaternion `q` rotates body-frame
//!   vectors into the world frame.
//! * Products and constructors renormalize and canonicalize the sign so
//!   `w >= 0`. Residual code still applies an explicit shortest-arc check
//!   where the double cover matters.
//! * Local perturbations are right (body-side): `q ⊕ δθ = q ⊗ exp(δθ)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Below this rotation angle (rad) the exp/log maps switch to Taylor branches.
pub const SMALL_ANGLE: f64 = 1e-8;
/// `so3_log` refuses angles closer than this to pi, where the axis flips sign.
pub const LOG_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle:.9} rad is within {margin:.1e} of pi: axis-angle log is out of domain")]
    LogNearPi { angle: f64, margin: f64 },
}

/// Skew-symmetric (cross-product) matrix: `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion `(w, x, y, z)` in Hamilton convention.
///
/// Every constructor and every product renormalizes, so the unit-norm
/// invariant holds to ~1e-15 even over millions of chained multiplies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuat {
    pub fn identity() -> Self {
        UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Build from raw components, normalizing and fixing the sign.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::from_raw([w, x, y, z])
    }

    fn from_raw(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        assert!(n > 0.0 && n.is_finite(), "cannot normalize quaternion with norm {n}");
        // Canonical sign: w >= 0 resolves the double cover at normalization points.
        let s = if q[0] < 0.0 { -1.0 / n } else { 1.0 / n };
        UnitQuat { w: q[0] * s, x: q[1] * s, y: q[2] * s, z: q[3] * s }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// Imaginary part `(x, y, z)` — the `vec(q)` of the rotation residual.
    pub fn vec(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn as_wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conjugate(&self) -> Self {
        // Negating the vector part keeps w >= 0; no renormalization needed.
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Rotation angle in [0, pi]. Equals `so3_log(self).norm()` on the log domain.
    pub fn angle(&self) -> f64 {
        2.0 * self.vec().norm().atan2(self.w.abs())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotate a vector: `R(q) * v`.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2 w (u x v) + 2 u x (u x v), u = vec(q)
        let u = self.vec();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(&t)
    }

    /// Rotate by the inverse: `R(q)^T * v`.
    pub fn rotate_inv(&self, v: &Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    pub fn norm_error(&self) -> f64 {
        ((self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt() - 1.0).abs()
    }
}

impl std::ops::Mul for UnitQuat {
    type Output = UnitQuat;

    fn mul(self, rhs: UnitQuat) -> UnitQuat {
        UnitQuat::from_raw(quat_mul_raw(self.as_wxyz(), rhs.as_wxyz()))
    }
}

/// Hamilton product on raw `(w, x, y, z)` 4-vectors, without normalization.
pub fn quat_mul_raw(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Composition `a ∘ b` under the Hamilton convention; unit-norm by construction.
pub fn quat_multiply(a: &UnitQuat, b: &UnitQuat) -> UnitQuat {
    *a * *b
}

/// Rotation matrix of a unit quaternion (proper orthogonal).
pub fn quat_to_rotmat(q: &UnitQuat) -> Mat3 {
    let [w, x, y, z] = q.as_wxyz();
    let (x2, y2, z2) = (x + x, y + y, z + z);
    let (wx, wy, wz) = (w * x2, w * y2, w * z2);
    let (xx, xy, xz) = (x * x2, x * y2, x * z2);
    let (yy, yz, zz) = (y * y2, y * z2, z * z2);
    Mat3::new(
        1.0 - (yy + zz),
        xy - wz,
        xz + wy,
        xy + wz,
        1.0 - (xx + zz),
        yz - wx,
        xz - wy,
        yz + wx,
        1.0 - (xx + yy),
    )
}

/// 4x4 matrix `Ω(ω)` such that `q̇ = ½ Ω(ω) q` integrates a body angular
/// rate, acting on `q` as a `(w, x, y, z)` column.
///
/// Under the Hamilton convention used here this is the matrix of *right*
/// multiplication by the pure quaternion `(0, ω)`: `Ω(ω) q = q ⊗ (0, ω)`.
/// (Sources that use the JPL convention write the mirrored left-multiply
/// form; the two agree once both the product order and the storage order
/// are mapped.)
pub fn omega_matrix(omega: &Vec3) -> Mat4 {
    let (x, y, z) = (omega.x, omega.y, omega.z);
    Mat4::new(
        0.0, -x, -y, -z, //
        x, 0.0, z, -y, //
        y, -z, 0.0, x, //
        z, y, -x, 0.0,
    )
}

/// Exponential map: rotation vector (axis * angle, rad) to unit quaternion.
pub fn so3_exp(phi: &Vec3) -> UnitQuat {
    let theta = phi.norm();
    let half = 0.5 * theta;
    // sin(θ/2)/θ, with a Taylor branch below the small-angle cutoff.
    let k = if theta < SMALL_ANGLE {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    UnitQuat::new(half.cos(), phi.x * k, phi.y * k, phi.z * k)
}

/// Logarithm map: unit quaternion to rotation vector with angle in [0, pi).
///
/// Fails within [`LOG_PI_MARGIN`] of pi, where the axis is not unique.
pub fn so3_log(q: &UnitQuat) -> Result<Vec3, GeometryError> {
    let angle = q.angle();
    if angle > std::f64::consts::PI - LOG_PI_MARGIN {
        return Err(GeometryError::LogNearPi { angle, margin: LOG_PI_MARGIN });
    }
    Ok(log_unchecked(q))
}

/// Same formula as [`so3_log`] without the domain check; still well-defined
/// (but discontinuous) up to pi. Residual code uses this path.
pub(crate) fn log_unchecked(q: &UnitQuat) -> Vec3 {
    // Canonical w >= 0 guarantees angle <= pi.
    let v = q.vec();
    let vn = v.norm();
    if vn < SMALL_ANGLE {
        // theta/sin(theta/2)/2 ~ 2 * (1 + vn^2/(6 w^2)) / w ~ 2/w for tiny angles
        return v * (2.0 / q.w());
    }
    let theta = 2.0 * vn.atan2(q.w());
    v * (theta / vn)
}

/// `2 * vec(q)`: the small-angle rotation residual of the pose error row.
pub fn quat_vec2(q: &UnitQuat) -> Vec3 {
    q.vec() * 2.0
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ) exp(J_r(φ) δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let s = skew(phi);
    let (c1, c2) = if theta < 1e-5 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Mat3::identity() - s * c1 + s * s * c2
}

/// Inverse of the right Jacobian: `log(exp(φ) exp(δ)) ≈ φ + J_r⁻¹(φ) δ`.
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let s = skew(phi);
    let d = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Mat3::identity() + s * 0.5 + s * s * d
}

/// Rigid transform: rotation then translation, `T(p) = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseSE3 {
    pub rotation: UnitQuat,
    pub translation: Vec3,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        PoseSE3 { rotation, translation }
    }

    pub fn from_parts(phi: &Vec3, t: &Vec3) -> Self {
        PoseSE3 { rotation: so3_exp(phi), translation: *t }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rot_inv = self.rotation.inverse();
        PoseSE3 { rotation: rot_inv, translation: -rot_inv.rotate(&self.translation) }
    }

    /// Relative transform from `self` to `other`: `self⁻¹ ∘ other`.
    pub fn between(&self, other: &PoseSE3) -> PoseSE3 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotmat(&self.rotation)
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn quat_z(angle: f64) -> UnitQuat {
        so3_exp(&Vec3::new(0.0, 0.0, angle))
    }

    fn rand_quat(rng: &mut impl rand::Rng) -> UnitQuat {
        UnitQuat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn multiply_identity() {
        let q = quat_z(0.7);
        let id = UnitQuat::identity();
        assert_eq!(quat_multiply(&id, &q), q);
        assert_eq!(quat_multiply(&q, &id), q);
    }

    #[test]
    fn multiply_adds_angles_on_shared_axis() {
        let q90 = quat_z(FRAC_PI_2);
        let q180 = quat_multiply(&q90, &q90);
        assert_relative_eq!(q180.angle(), PI, epsilon = 1e-12);
        assert_relative_eq!(q180.vec().normalize().z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn multiply_matches_matrix_product() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let a = rand_quat(&mut rng);
            let b = rand_quat(&mut rng);
            let lhs = quat_to_rotmat(&quat_multiply(&a, &b));
            let rhs = quat_to_rotmat(&a) * quat_to_rotmat(&b);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotmat_identity_and_axis() {
        assert_relative_eq!(quat_to_rotmat(&UnitQuat::identity()), Mat3::identity(), epsilon = 1e-15);
        let r = quat_to_rotmat(&quat_z(FRAC_PI_2));
        let mapped = r * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(mapped, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotmat_is_proper_orthogonal() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let r = quat_to_rotmat(&rand_quat(&mut rng));
            assert_relative_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotate_matches_rotmat() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q = rand_quat(&mut rng);
            let v = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            assert_relative_eq!(q.rotate(&v), quat_to_rotmat(&q) * v, epsilon = 1e-12);
        }
    }

    #[test]
    fn omega_zero_is_zero_matrix() {
        assert_eq!(omega_matrix(&Vec3::zeros()), Mat4::zeros());
    }

    #[test]
    fn omega_matches_raw_quaternion_product() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q = rand_quat(&mut rng);
            let w = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let lhs = omega_matrix(&w) * nalgebra::Vector4::from_column_slice(&q.as_wxyz());
            let rhs = quat_mul_raw(q.as_wxyz(), [0.0, w.x, w.y, w.z]);
            for i in 0..4 {
                assert_relative_eq!(lhs[i], rhs[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn omega_integrates_constant_rate() {
        // q̇ = ½ Ω(ω) q, ω = (0,0,π/2), 1 s of forward-Euler at dt = 1e-5.
        let omega = Vec3::new(0.0, 0.0, FRAC_PI_2);
        let om = omega_matrix(&omega);
        let mut q = nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0);
        let dt = 1e-5;
        for _ in 0..100_000 {
            q += om * q * (0.5 * dt);
            q.normalize_mut();
        }
        let got = UnitQuat::new(q[0], q[1], q[2], q[3]);
        assert!((got.angle() - FRAC_PI_2).abs() < 1e-4);
        assert_relative_eq!(got.vec().normalize().z, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn exp_log_basics() {
        assert_eq!(so3_exp(&Vec3::zeros()), UnitQuat::identity());
        let q = so3_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(q.w(), (FRAC_PI_2 / 2.0).cos(), epsilon = 1e-15);
        assert_relative_eq!(q.vec().z, (FRAC_PI_2 / 2.0).sin(), epsilon = 1e-15);
        assert_eq!(so3_log(&UnitQuat::identity()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn exp_log_round_trip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let phi = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize()
                * rng.gen_range(0.0..3.0);
            let back = so3_log(&so3_exp(&phi)).unwrap();
            assert_relative_eq!(back, phi, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_rejects_near_pi() {
        let q = so3_exp(&Vec3::new(PI - 1e-9, 0.0, 0.0));
        assert!(matches!(so3_log(&q), Err(GeometryError::LogNearPi { .. })));
    }

    #[test]
    fn quat_vec_cases() {
        assert_eq!(quat_vec2(&UnitQuat::identity()), Vec3::zeros());
        let q = quat_z(FRAC_PI_2);
        assert_relative_eq!(quat_vec2(&q).z, 2.0 * (FRAC_PI_2 / 2.0).sin(), epsilon = 1e-15);
    }

    #[test]
    fn quat_vec_taylor_bound_vs_log() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let angle = rng.gen_range(0.0..0.1);
            let axis = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let q = so3_exp(&(axis * angle));
            let err = (quat_vec2(&q) - so3_log(&q).unwrap()).norm();
            assert!(err <= angle.powi(3) / 24.0 + 1e-12, "err {err} angle {angle}");
        }
    }

    #[test]
    fn norm_stable_over_chained_multiplies() {
        let step = so3_exp(&Vec3::new(1e-3, 2e-3, -1.5e-3));
        let mut q = UnitQuat::identity();
        for _ in 0..1_000_000 {
            q = q * step;
        }
        assert!(q.norm_error() < 1e-9);
    }

    #[test]
    fn right_jacobian_consistency() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let phi = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let jr = right_jacobian(&phi);
            assert_relative_eq!(right_jacobian_inv(&phi) * jr, Mat3::identity(), epsilon = 1e-9);
            // exp(φ + δ) ≈ exp(φ) exp(J_r δ)
            let delta = Vec3::new(1e-6, -2e-6, 3e-6);
            let lhs = so3_exp(&(phi + delta));
            let rhs = so3_exp(&phi) * so3_exp(&(jr * delta));
            assert!((lhs.inverse() * rhs).angle() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn pose_compose_inverse_is_identity(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            tx in -10.0f64..10.0, ty in -10.0f64..10.0, tz in -10.0f64..10.0,
        ) {
            let p = PoseSE3::from_parts(&Vec3::new(ax, ay, az), &Vec3::new(tx, ty, tz));
            let e = p.compose(&p.inverse());
            prop_assert!(e.rotation.angle() < 1e-9);
            prop_assert!(e.translation.norm() < 1e-9);
        }

        #[test]
        fn pose_compose_associative(
            a in proptest::array::uniform6(-1.0f64..1.0),
            b in proptest::array::uniform6(-1.0f64..1.0),
            c in proptest::array::uniform6(-1.0f64..1.0),
        ) {
            let mk = |v: [f64; 6]| {
                PoseSE3::from_parts(&Vec3::new(v[0], v[1], v[2]), &(Vec3::new(v[3], v[4], v[5]) * 5.0))
            };
            let (pa, pb, pc) = (mk(a), mk(b), mk(c));
            let lhs = pa.compose(&pb).compose(&pc);
            let rhs = pa.compose(&pb.compose(&pc));
            prop_assert!((lhs.rotation.inverse() * rhs.rotation).angle() < 1e-9);
            prop_assert!((lhs.translation - rhs.translation).norm() < 1e-9);
        }

        #[test]
        fn products_stay_unit(a in proptest::array::uniform4(-1.0f64..1.0), b in proptest::array::uniform4(-1.0f64..1.0)) {
            prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            prop_assume!(b.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let qa = UnitQuat::new(a[0], a[1], a[2], a[3]);
            let qb = UnitQuat::new(b[0], b[1], b[2], b[3]);
            prop_assert!((qa * qb).norm_error() < 1e-12);
            prop_assert!((qa * qb).w() >= 0.0);
        }
    }
}
