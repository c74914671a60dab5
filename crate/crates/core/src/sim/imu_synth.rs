//! IMU synthesis from exact trajectory kinematics: the inverse of the
//! measurement model, with seeded white noise and random-walk biases.

use super::trajectory::{Trajectory, TrajectoryError};
use crate::geometry::Vec3;
use crate::imu::{ImuSample, NoiseParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImuSynthError {
    #[error("IMU rate {0} Hz too low (need >= 50 Hz)")]
    RateTooLow(f64),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Initial biases; their evolution follows the random-walk densities in
/// [`NoiseParams`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BiasSpec {
    pub ba0: Vec3,
    pub bg0: Vec3,
}

/// Synthesize a sample stream over the whole trajectory span.
///
/// `a_m = R^T (a_world + g) + b_a(t) + n_a`, `w_m = w_body + b_g(t) + n_w`;
/// white-noise draws are scaled by `1/sqrt(dt)` so the continuous densities
/// in `noise` are realized, and biases walk with `sigma_nb * sqrt(dt)`
/// steps. Deterministic for a fixed seed. Timestamps sit on an exact
/// nanosecond grid.
pub fn synth_imu(
    traj: &Trajectory,
    rate_hz: f64,
    noise: &NoiseParams,
    bias: &BiasSpec,
    seed: u64,
) -> Result<Vec<ImuSample>, ImuSynthError> {
    if rate_hz < 50.0 {
        return Err(ImuSynthError::RateTooLow(rate_hz));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step_ns = (1e9 / rate_hz).round() as i64;
    let start_ns = (traj.start_time() * 1e9).round() as i64;
    let end_ns = (traj.end_time() * 1e9).round() as i64;
    let dt = step_ns as f64 / 1e9;
    let inv_sqrt_dt = 1.0 / dt.sqrt();
    let sqrt_dt = dt.sqrt();

    let mut ba = bias.ba0;
    let mut bg = bias.bg0;
    let mut out = Vec::new();
    let mut t_ns = start_ns;
    while t_ns <= end_ns {
        let t = t_ns as f64 / 1e9;
        let gt = traj.sample(t)?;
        let specific_force = gt.pose.rotation.rotate_inv(&(gt.a + noise.gravity));
        let accel = specific_force
            + ba
            + Vec3::new(
                noise.sigma_na.x * normal_draw(&mut rng) * inv_sqrt_dt,
                noise.sigma_na.y * normal_draw(&mut rng) * inv_sqrt_dt,
                noise.sigma_na.z * normal_draw(&mut rng) * inv_sqrt_dt,
            );
        let gyro = gt.omega
            + bg
            + Vec3::new(
                noise.sigma_nw.x * normal_draw(&mut rng) * inv_sqrt_dt,
                noise.sigma_nw.y * normal_draw(&mut rng) * inv_sqrt_dt,
                noise.sigma_nw.z * normal_draw(&mut rng) * inv_sqrt_dt,
            );
        out.push(ImuSample { t, accel, gyro });

        ba += Vec3::new(
            noise.sigma_nba.x * normal_draw(&mut rng) * sqrt_dt,
            noise.sigma_nba.y * normal_draw(&mut rng) * sqrt_dt,
            noise.sigma_nba.z * normal_draw(&mut rng) * sqrt_dt,
        );
        bg += Vec3::new(
            noise.sigma_nbw.x * normal_draw(&mut rng) * sqrt_dt,
            noise.sigma_nbw.y * normal_draw(&mut rng) * sqrt_dt,
            noise.sigma_nbw.z * normal_draw(&mut rng) * sqrt_dt,
        );
        t_ns += step_ns;
    }
    Ok(out)
}

pub(crate) fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
