//! IMU measurement model, discrete state propagation and covariance
//! propagation.
//!
//! The error state is ordered `(δp, δv, δθ, δb_a, δb_g)` with `δθ` a right
//! (body-side) rotation perturbation: `q_true = q̂ ⊗ exp(δθ)`. One
//! propagation step treats its sample as constant over `dt` and uses the
//! half-step rotated frame for the specific force, which makes the scheme
//! second order; stream-level helpers feed it the average of consecutive
//! samples.

use crate::geometry::{
    quat_to_rotmat, right_jacobian, skew, so3_exp, Mat3, UnitQuat, Vec3,
};
use nalgebra::SMatrix;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub type Cov15 = SMatrix<f64, 15, 15>;

/// Largest inter-sample interval a single propagation step will accept.
pub const MAX_STEP_DT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ImuError {
    #[error("propagation gap: step from t={from:.6}s by dt={dt:.6}s (sample at t={sample:.6}s) is outside (0, {max:.3}]s")]
    PropagationGap { from: f64, sample: f64, dt: f64, max: f64 },
    #[error("IMU stream timestamps must be strictly increasing: t[{index}]={t:.9} after {prev:.9}")]
    NonMonotonicStream { index: usize, t: f64, prev: f64 },
    #[error("empty IMU stream")]
    EmptyStream,
    #[error("{path}:{line}: malformed IMU CSV line: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("IMU stream I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// One accelerometer + gyroscope reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Timestamp, seconds.
    pub t: f64,
    /// Measured specific force, m/s^2.
    pub accel: Vec3,
    /// Measured angular rate, rad/s.
    pub gyro: Vec3,
}

/// Full navigation state with its 15x15 covariance.
#[derive(Debug, Clone, Copy)]
pub struct ImuState {
    pub t: f64,
    /// Position of the IMU in the world frame, m.
    pub p: Vec3,
    /// Velocity in the world frame, m/s.
    pub v: Vec3,
    /// Body-to-world rotation.
    pub q: UnitQuat,
    /// Accelerometer bias, m/s^2.
    pub ba: Vec3,
    /// Gyro bias, rad/s.
    pub bg: Vec3,
    pub cov: Cov15,
}

impl ImuState {
    pub fn at_rest(t: f64) -> Self {
        ImuState {
            t,
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            q: UnitQuat::identity(),
            ba: Vec3::zeros(),
            bg: Vec3::zeros(),
            cov: Cov15::zeros(),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotmat(&self.q)
    }
}

/// How `Q_d` is assembled from the continuous noise densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QdMode {
    /// `Q_d = G_c Q_c G_cᵀ · dt` (first-order hold).
    #[default]
    FirstOrderHold,
    /// Trapezoidal discretization of the transition-weighted integral:
    /// `Q_d = ½ (F_d Q₀ F_dᵀ + Q₀)` with `Q₀ = G_c Q_c G_cᵀ · dt`.
    Trapezoidal,
}

/// Continuous-time noise densities (per axis) and the world gravity vector.
#[derive(Debug, Clone, Copy)]
pub struct NoiseParams {
    /// Accelerometer white noise density, (m/s^2)/sqrt(Hz).
    pub sigma_na: Vec3,
    /// Accelerometer bias random walk, (m/s^3)/sqrt(Hz).
    pub sigma_nba: Vec3,
    /// Gyro white noise density, (rad/s)/sqrt(Hz).
    pub sigma_nw: Vec3,
    /// Gyro bias random walk, (rad/s^2)/sqrt(Hz).
    pub sigma_nbw: Vec3,
    /// Gravity magnitude vector in the world frame; the dynamics subtract it,
    /// so a level stationary unit measures `+gravity` on its accelerometer.
    pub gravity: Vec3,
    pub qd_mode: QdMode,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma_na: Vec3::repeat(0.02),
            sigma_nba: Vec3::repeat(2e-4),
            sigma_nw: Vec3::repeat(2e-3),
            sigma_nbw: Vec3::repeat(2e-5),
            gravity: Vec3::new(0.0, 0.0, 9.81),
            qd_mode: QdMode::FirstOrderHold,
        }
    }
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        NoiseParams {
            sigma_na: Vec3::zeros(),
            sigma_nba: Vec3::zeros(),
            sigma_nw: Vec3::zeros(),
            sigma_nbw: Vec3::zeros(),
            ..Default::default()
        }
    }
}

/// Remove the current bias estimates from a raw sample (the deterministic
/// part of the measurement model).
pub fn correct_measurement(s: &ImuSample, ba: &Vec3, bg: &Vec3) -> (Vec3, Vec3) {
    (s.accel - ba, s.gyro - bg)
}

fn check_dt(x: &ImuState, s: &ImuSample, dt: f64) -> Result<(), ImuError> {
    if !(dt > 0.0 && dt <= MAX_STEP_DT) {
        return Err(ImuError::PropagationGap { from: x.t, sample: s.t, dt, max: MAX_STEP_DT });
    }
    Ok(())
}

/// Noise-free midpoint propagation of `(p, v, q)` over `dt`; biases and
/// covariance are carried unchanged.
pub fn propagate_state(x: &ImuState, s: &ImuSample, dt: f64, n: &NoiseParams) -> Result<ImuState, ImuError> {
    check_dt(x, s, dt)?;
    let (a, w) = correct_measurement(s, &x.ba, &x.bg);
    let q_mid = x.q * so3_exp(&(w * (0.5 * dt)));
    let acc_world = q_mid.rotate(&a) - n.gravity;
    Ok(ImuState {
        t: x.t + dt,
        p: x.p + x.v * dt + acc_world * (0.5 * dt * dt),
        v: x.v + acc_world * dt,
        q: x.q * so3_exp(&(w * dt)),
        ba: x.ba,
        bg: x.bg,
        cov: x.cov,
    })
}

/// Discrete error-state transition matrix of [`propagate_state`] — the exact
/// first derivative of the implemented midpoint step.
pub fn discrete_transition(x: &ImuState, s: &ImuSample, dt: f64) -> Cov15 {
    let (a, w) = correct_measurement(s, &x.ba, &x.bg);
    let r_k = x.rotation_matrix();
    let half_phi = w * (0.5 * dt);
    let full_phi = w * dt;
    let r_half = quat_to_rotmat(&so3_exp(&half_phi));
    let r_mid = r_k * r_half;
    let u = r_half * a; // specific force in the frame of q_k
    let jr_half = right_jacobian(&half_phi);
    let jr_full = right_jacobian(&full_phi);

    let dv_dtheta = -r_k * skew(&u) * dt;
    let dv_dba = -r_mid * dt;
    let dv_dbg = r_mid * skew(&a) * jr_half * (0.5 * dt * dt);

    let mut f = Cov15::identity();
    let i3 = Mat3::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * dt));
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(dv_dtheta * (0.5 * dt)));
    f.fixed_view_mut::<3, 3>(0, 9).copy_from(&(dv_dba * (0.5 * dt)));
    f.fixed_view_mut::<3, 3>(0, 12).copy_from(&(dv_dbg * (0.5 * dt)));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&dv_dtheta);
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&dv_dba);
    f.fixed_view_mut::<3, 3>(3, 12).copy_from(&dv_dbg);
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&quat_to_rotmat(&so3_exp(&full_phi)).transpose());
    f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-jr_full * dt));
    f
}

fn process_noise_base(x: &ImuState, s: &ImuSample, dt: f64, n: &NoiseParams) -> Cov15 {
    let (_, w) = correct_measurement(s, &x.ba, &x.bg);
    let r_mid = x.rotation_matrix() * quat_to_rotmat(&so3_exp(&(w * (0.5 * dt))));
    let sa = Mat3::from_diagonal(&n.sigma_na.map(|v| v * v));
    let mut q = Cov15::zeros();
    q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r_mid * sa * r_mid.transpose() * dt));
    q.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&Mat3::from_diagonal(&n.sigma_nw.map(|v| v * v * dt)));
    q.fixed_view_mut::<3, 3>(9, 9)
        .copy_from(&Mat3::from_diagonal(&n.sigma_nba.map(|v| v * v * dt)));
    q.fixed_view_mut::<3, 3>(12, 12)
        .copy_from(&Mat3::from_diagonal(&n.sigma_nbw.map(|v| v * v * dt)));
    q
}

/// `P' = F_d P F_dᵀ + Q_d`, symmetrized.
pub fn propagate_covariance(x: &ImuState, s: &ImuSample, dt: f64, n: &NoiseParams) -> Result<Cov15, ImuError> {
    check_dt(x, s, dt)?;
    let f = discrete_transition(x, s, dt);
    let q0 = process_noise_base(x, s, dt, n);
    let qd = match n.qd_mode {
        QdMode::FirstOrderHold => q0,
        QdMode::Trapezoidal => (f * q0 * f.transpose() + q0) * 0.5,
    };
    let p = f * x.cov * f.transpose() + qd;
    Ok((p + p.transpose()) * 0.5)
}

/// One full step: state and covariance together.
pub fn propagate_full(x: &ImuState, s: &ImuSample, dt: f64, n: &NoiseParams) -> Result<ImuState, ImuError> {
    let cov = propagate_covariance(x, s, dt, n)?;
    let mut out = propagate_state(x, s, dt, n)?;
    out.cov = cov;
    Ok(out)
}

/// Effective constant-over-interval segments cut from a sample stream.
///
/// Consecutive samples are averaged (midpoint rule) and segments are split
/// by linear interpolation at the requested boundaries, so state propagation
/// and pre-integration walking the same segments see identical inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Effective sample for the interval; `t` is the interval start.
    pub sample: ImuSample,
    pub dt: f64,
}

fn interpolate(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
    let u = (t - a.t) / (b.t - a.t);
    ImuSample {
        t,
        accel: a.accel + (b.accel - a.accel) * u,
        gyro: a.gyro + (b.gyro - a.gyro) * u,
    }
}

/// Cut `[t0, t1]` out of a stream as midpoint-averaged segments.
///
/// `samples` must cover the interval (one sample at or before `t0`, one at
/// or after `t1`) with strictly increasing timestamps.
pub fn stream_segments(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<Segment>, ImuError> {
    if samples.is_empty() {
        return Err(ImuError::EmptyStream);
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(ImuError::NonMonotonicStream { index: i + 1, t: pair[1].t, prev: pair[0].t });
        }
    }
    if t1 <= t0 {
        return Ok(Vec::new());
    }
    let mut knots: Vec<ImuSample> = Vec::new();
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.t <= t0 || a.t >= t1 {
            continue;
        }
        let lo = if a.t < t0 { interpolate(a, b, t0) } else { *a };
        let hi = if b.t > t1 { interpolate(a, b, t1) } else { *b };
        if knots.is_empty() {
            knots.push(lo);
        }
        knots.push(hi);
    }
    if knots.len() < 2 {
        return Err(ImuError::EmptyStream);
    }
    Ok(knots
        .windows(2)
        .map(|w| Segment {
            sample: ImuSample {
                t: w[0].t,
                accel: (w[0].accel + w[1].accel) * 0.5,
                gyro: (w[0].gyro + w[1].gyro) * 0.5,
            },
            dt: w[1].t - w[0].t,
        })
        .collect())
}

/// Propagate through every segment in order (noise-free state only).
pub fn propagate_segments(x: &ImuState, segs: &[Segment], n: &NoiseParams) -> Result<ImuState, ImuError> {
    let mut state = *x;
    for seg in segs {
        state = propagate_state(&state, &seg.sample, seg.dt, n)?;
    }
    Ok(state)
}

/// Roll/pitch alignment from averaged stationary accelerometer readings:
/// the shortest-arc rotation taking the mean specific force to +z has no
/// yaw component, so yaw starts at zero.
pub fn align_from_gravity(mean_accel: &Vec3) -> UnitQuat {
    let a = mean_accel.normalize();
    let z = Vec3::new(0.0, 0.0, 1.0);
    let axis = a.cross(&z);
    let angle = a.dot(&z).clamp(-1.0, 1.0).acos();
    let axis_norm = axis.norm();
    if axis_norm < 1e-12 {
        return UnitQuat::identity();
    }
    so3_exp(&(axis * (angle / axis_norm))).inverse()
}

const IMU_CSV_HEADER: &str = "t,ax,ay,az,wx,wy,wz";

/// Write an IMU stream as `t,ax,ay,az,wx,wy,wz` CSV with header.
pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<(), ImuError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{IMU_CSV_HEADER}")?;
    for s in samples {
        writeln!(
            f,
            "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            s.t, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        )?;
    }
    Ok(())
}

/// Read an IMU stream, validating the header and timestamp monotonicity.
pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>, ImuError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != IMU_CSV_HEADER {
                return Err(ImuError::Parse {
                    path: display,
                    line: lineno,
                    msg: format!("expected header '{IMU_CSV_HEADER}', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(ImuError::Parse {
                path: display,
                line: lineno,
                msg: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 7];
        for (i, field) in fields.iter().enumerate() {
            vals[i] = field.trim().parse().map_err(|e| ImuError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("field {}: {e}", i + 1),
            })?;
        }
        let s = ImuSample {
            t: vals[0],
            accel: Vec3::new(vals[1], vals[2], vals[3]),
            gyro: Vec3::new(vals[4], vals[5], vals[6]),
        };
        if let Some(prev) = samples.last() {
            let prev: &ImuSample = prev;
            if s.t <= prev.t {
                return Err(ImuError::NonMonotonicStream { index: samples.len(), t: s.t, prev: prev.t });
            }
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(ImuError::EmptyStream);
    }
    Ok(samples)
}
