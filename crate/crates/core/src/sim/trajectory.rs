//! Waypoint trajectories with analytic derivatives.
//!
//! Position goes through a natural cubic spline per axis; rotation through a
//! natural cubic spline on the unwrapped rotation-vector log. An optional
//! quintic ease (on by default) time-warps the whole spline so that both
//! velocity and acceleration vanish at the ends, which makes the optional
//! stationary holds before and after the motion C²-continuous joins.

use crate::geometry::{right_jacobian, so3_exp, PoseSE3, UnitQuat, Vec3};
use crate::geometry::log_unchecked;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("need at least one waypoint")]
    NoWaypoints,
    #[error("waypoint times must strictly increase: t[{index}]={t} after {prev}")]
    NonMonotonic { index: usize, t: f64, prev: f64 },
    #[error("t={t:.6}s outside trajectory span [{start:.6}, {end:.6}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Waypoint {
    pub t: f64,
    pub pose: PoseSE3,
}

/// Waypoint list plus interpolation policy.
#[derive(Debug, Clone)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Waypoint>,
    /// Stationary hold before the first waypoint, s.
    pub hold_start: f64,
    /// Stationary hold after the last waypoint, s.
    pub hold_end: f64,
    /// Quintic ease over the spline span (rest-to-rest); disable for
    /// constant-velocity segments.
    pub ease_in_out: bool,
}

impl TrajectorySpec {
    pub fn new(waypoints: Vec<Waypoint>) -> Self {
        TrajectorySpec { waypoints, hold_start: 1.5, hold_end: 0.5, ease_in_out: true }
    }
}

/// Exact kinematic ground truth at one instant.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth {
    pub pose: PoseSE3,
    /// World-frame velocity, m/s.
    pub v: Vec3,
    /// World-frame acceleration, m/s^2.
    pub a: Vec3,
    /// Body-frame angular rate, rad/s.
    pub omega: Vec3,
}

/// Natural cubic spline over one scalar channel.
#[derive(Debug, Clone)]
struct CubicSpline {
    ts: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (natural: zero at both ends).
    m: Vec<f64>,
}

impl CubicSpline {
    fn fit(ts: &[f64], ys: &[f64]) -> Self {
        let n = ts.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal solve (Thomas algorithm) for interior second derivatives.
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = ts[i] - ts[i - 1];
                let h1 = ts[i + 1] - ts[i];
                sub[i] = h0 / 6.0;
                diag[i] = (h0 + h1) / 3.0;
                sup[i] = h1 / 6.0;
                rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
            }
            for i in 2..n - 1 {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            if n >= 3 {
                m[n - 2] = rhs[n - 2] / diag[n - 2];
                for i in (1..n - 2).rev() {
                    m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
                }
            }
        }
        CubicSpline { ts: ts.to_vec(), ys: ys.to_vec(), m }
    }

    fn segment(&self, t: f64) -> usize {
        match self.ts.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.ts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.ts.len() - 2),
        }
    }

    /// Value and first/second derivatives at `t` (inside the knot span).
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        if self.ts.len() == 1 {
            return (self.ys[0], 0.0, 0.0);
        }
        let i = self.segment(t);
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - t) / h, (t - t0) / h);
        let (y0, y1, m0, m1) = (self.ys[i], self.ys[i + 1], self.m[i], self.m[i + 1]);
        let value = a * y0
            + b * y1
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * (h * h) / 6.0;
        let d1 = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        let d2 = a * m0 + b * m1;
        (value, d1, d2)
    }
}

/// Quintic smoothstep with zero first and second derivatives at both ends.
fn smoothstep5(x: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    let x3 = x2 * x;
    (
        10.0 * x3 - 15.0 * x2 * x2 + 6.0 * x2 * x3,
        30.0 * x2 - 60.0 * x3 + 30.0 * x2 * x2,
        60.0 * x - 180.0 * x2 + 120.0 * x3,
    )
}

/// A built trajectory ready for sampling.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pos: [CubicSpline; 3],
    rot: [CubicSpline; 3],
    t_first: f64,
    t_last: f64,
    hold_start: f64,
    hold_end: f64,
    ease: bool,
}

impl Trajectory {
    pub fn build(spec: &TrajectorySpec) -> Result<Self, TrajectoryError> {
        if spec.waypoints.is_empty() {
            return Err(TrajectoryError::NoWaypoints);
        }
        for (i, w) in spec.waypoints.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(TrajectoryError::NonMonotonic { index: i + 1, t: w[1].t, prev: w[0].t });
            }
        }
        let ts: Vec<f64> = spec.waypoints.iter().map(|w| w.t).collect();
        let mut pos_ch = [Vec::new(), Vec::new(), Vec::new()];
        let mut rot_ch = [Vec::new(), Vec::new(), Vec::new()];
        let mut prev_phi = Vec3::zeros();
        for (k, w) in spec.waypoints.iter().enumerate() {
            for a in 0..3 {
                pos_ch[a].push(w.pose.translation[a]);
            }
            let mut phi = log_unchecked(&w.pose.rotation);
            // Unwrap toward the previous knot so large cumulative rotations
            // spline smoothly.
            if k > 0 && phi.norm() > 1e-9 {
                let axis = phi.normalize();
                let tau = 2.0 * std::f64::consts::PI;
                let mut best = phi;
                let mut best_d = (phi - prev_phi).norm();
                for n in [-2.0f64, -1.0, 1.0, 2.0] {
                    let cand = phi + axis * (tau * n);
                    let d = (cand - prev_phi).norm();
                    if d < best_d {
                        best = cand;
                        best_d = d;
                    }
                }
                phi = best;
            }
            prev_phi = phi;
            for a in 0..3 {
                rot_ch[a].push(phi[a]);
            }
        }
        Ok(Trajectory {
            pos: [
                CubicSpline::fit(&ts, &pos_ch[0]),
                CubicSpline::fit(&ts, &pos_ch[1]),
                CubicSpline::fit(&ts, &pos_ch[2]),
            ],
            rot: [
                CubicSpline::fit(&ts, &rot_ch[0]),
                CubicSpline::fit(&ts, &rot_ch[1]),
                CubicSpline::fit(&ts, &rot_ch[2]),
            ],
            t_first: ts[0],
            t_last: *ts.last().unwrap(),
            hold_start: spec.hold_start,
            hold_end: spec.hold_end,
            ease: spec.ease_in_out,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.t_first - self.hold_start
    }

    pub fn end_time(&self) -> f64 {
        self.t_last + self.hold_end
    }

    fn eval_raw(&self, tau: f64) -> (Vec3, Vec3, Vec3, Vec3, Vec3, Vec3) {
        let mut p = Vec3::zeros();
        let mut dp = Vec3::zeros();
        let mut ddp = Vec3::zeros();
        let mut phi = Vec3::zeros();
        let mut dphi = Vec3::zeros();
        let mut ddphi = Vec3::zeros();
        for a in 0..3 {
            let (v, d1, d2) = self.pos[a].eval(tau);
            p[a] = v;
            dp[a] = d1;
            ddp[a] = d2;
            let (v, d1, d2) = self.rot[a].eval(tau);
            phi[a] = v;
            dphi[a] = d1;
            ddphi[a] = d2;
        }
        (p, dp, ddp, phi, dphi, ddphi)
    }

    /// Exact pose / velocity / acceleration / body rate at `t`.
    pub fn sample(&self, t: f64) -> Result<GroundTruth, TrajectoryError> {
        let (start, end) = (self.start_time(), self.end_time());
        if t < start - 1e-12 || t > end + 1e-12 {
            return Err(TrajectoryError::OutOfSpan { t, start, end });
        }
        // Holds outside the spline span: exact rest.
        let t_clamped = t.clamp(self.t_first, self.t_last);
        let span = self.t_last - self.t_first;
        let (tau, tau_d1, tau_d2) = if span <= 0.0 {
            (self.t_first, 0.0, 0.0)
        } else if self.ease {
            let x = (t_clamped - self.t_first) / span;
            let (s, s1, s2) = smoothstep5(x);
            (self.t_first + span * s, s1, s2 / span)
        } else if t == t_clamped {
            (t_clamped, 1.0, 0.0)
        } else {
            (t_clamped, 0.0, 0.0)
        };
        let (p, dp, ddp, phi, dphi, ddphi) = self.eval_raw(tau);
        let _ = ddphi;
        let v = dp * tau_d1;
        let a = ddp * (tau_d1 * tau_d1) + dp * tau_d2;
        let q = so3_exp(&phi);
        let phi_dot = dphi * tau_d1;
        let omega = right_jacobian(&phi) * phi_dot;
        Ok(GroundTruth { pose: PoseSE3::new(q, p), v, a, omega })
    }
}

/// Spec op shape: exact analytic derivatives of the built trajectory.
pub fn sample_ground_truth(traj: &Trajectory, t: f64) -> Result<GroundTruth, TrajectoryError> {
    traj.sample(t)
}
