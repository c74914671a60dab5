//! Trajectory association and relative translation/rotation error metrics,
//! plus the plot-ready per-axis error series.

use crate::geometry::{log_unchecked, PoseSE3, UnitQuat, Vec3};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("no associations within {max_dt}s")]
    EmptyAssociation { max_dt: f64 },
    #[error("no frame pairs to evaluate")]
    EmptyPairs,
    #[error("frame pair ({i},{j}) out of bounds for {len} associations")]
    BadPair { i: usize, j: usize, len: usize },
    #[error("{path}:{line}: malformed trajectory line: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("trajectory timestamps must strictly increase: t[{index}]={t:.9}")]
    NonMonotonic { index: usize, t: f64 },
    #[error("trajectory I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Time-stamped pose sequence.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, pose: PoseSE3) {
        self.samples.push((t, pose));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Nearest-timestamp association within `max_dt`, each ground-truth sample
/// used at most once; pairs are chosen globally by ascending time gap.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let gt_times: Vec<f64> = gt.samples.iter().map(|(t, _)| *t).collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (t, _)) in est.samples.iter().enumerate() {
        let idx = match gt_times.binary_search_by(|probe| probe.partial_cmp(t).unwrap()) {
            Ok(j) => j,
            Err(j) => j,
        };
        for j in [idx.wrapping_sub(1), idx, idx + 1] {
            if j < gt_times.len() {
                let dt = (gt_times[j] - t).abs();
                if dt <= max_dt {
                    candidates.push((dt, i, j));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut est_used = vec![false; est.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !est_used[i] && !gt_used[j] {
            est_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyAssociation { max_dt });
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Mean relative errors over explicit frame pairs: for each `(a, b)` the
/// error pose is `(gt_b ⊖ gt_a)⁻¹ ∘ (est_b ⊖ est_a)` with `x ⊖ y = y⁻¹ ∘ x`.
pub fn relative_errors(
    est: &Trajectory,
    gt: &Trajectory,
    associations: &[(usize, usize)],
    frame_pairs: &[(usize, usize)],
) -> Result<(f64, f64), EvalError> {
    if frame_pairs.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    for &(a, b) in frame_pairs {
        if a >= associations.len() || b >= associations.len() {
            return Err(EvalError::BadPair { i: a, j: b, len: associations.len() });
        }
        let (ea, ga) = associations[a];
        let (eb, gb) = associations[b];
        let rel_est = est.samples[ea].1.between(&est.samples[eb].1);
        let rel_gt = gt.samples[ga].1.between(&gt.samples[gb].1);
        let delta = rel_gt.between(&rel_est);
        sum_t += delta.translation.norm();
        sum_r += delta.rotation.angle();
    }
    let n = frame_pairs.len() as f64;
    Ok((sum_t / n, sum_r / n))
}

/// Consecutive plus fixed-gap frame pairs over the associated samples.
pub fn gap_pairs(n_associations: usize, gap: usize) -> Vec<(usize, usize)> {
    (0..n_associations.saturating_sub(gap)).map(|i| (i, i + gap)).collect()
}

/// Relative errors per gap and pooled over all gaps.
#[derive(Debug, Clone)]
pub struct RelativeErrorReport {
    /// `(gap, pair count, E_trans m, E_rot rad)` per requested gap.
    pub per_gap: Vec<(usize, usize, f64, f64)>,
    pub pooled_trans: f64,
    pub pooled_rot: f64,
    pub pooled_pairs: usize,
}

pub fn relative_error_report(
    est: &Trajectory,
    gt: &Trajectory,
    associations: &[(usize, usize)],
    gaps: &[usize],
) -> Result<RelativeErrorReport, EvalError> {
    let mut per_gap = Vec::new();
    let mut pooled = Vec::new();
    for &gap in gaps {
        let pairs = gap_pairs(associations.len(), gap);
        if pairs.is_empty() {
            continue;
        }
        let (et, er) = relative_errors(est, gt, associations, &pairs)?;
        per_gap.push((gap, pairs.len(), et, er));
        pooled.extend(pairs);
    }
    if pooled.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    let pooled_pairs = pooled.len();
    let (pooled_trans, pooled_rot) = relative_errors(est, gt, associations, &pooled)?;
    Ok(RelativeErrorReport { per_gap, pooled_trans, pooled_rot, pooled_pairs })
}

/// One row of the per-axis error series: world-frame position error and the
/// world-frame rotation error vector (roll/pitch/yaw for small errors).
#[derive(Debug, Clone, Copy)]
pub struct AxisErrorRow {
    pub t: f64,
    pub dpos: Vec3,
    pub drot: Vec3,
}

/// Per-sample pose error decomposed in the world frame.
pub fn per_axis_error_series(
    est: &Trajectory,
    gt: &Trajectory,
    associations: &[(usize, usize)],
) -> Vec<AxisErrorRow> {
    associations
        .iter()
        .map(|&(ei, gi)| {
            let (t, est_pose) = est.samples[ei];
            let (_, gt_pose) = gt.samples[gi];
            let dpos = est_pose.translation - gt_pose.translation;
            // Left (world-frame) rotation error: est = exp(drot) * gt.
            let drot = log_unchecked(&(est_pose.rotation * gt_pose.rotation.inverse()));
            AxisErrorRow { t, dpos, drot }
        })
        .collect()
}

/// Write the series as CSV with header `t,dx,dy,dz,droll,dpitch,dyaw`.
pub fn write_axis_error_csv(path: &Path, rows: &[AxisErrorRow]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,dx,dy,dz,droll,dpitch,dyaw")?;
    for r in rows {
        writeln!(
            f,
            "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.t, r.dpos.x, r.dpos.y, r.dpos.z, r.drot.x, r.drot.y, r.drot.z
        )?;
    }
    Ok(())
}

/// Write `t x y z qx qy qz qw` lines (the de-facto trajectory-benchmark
/// layout).
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (t, pose) in &traj.samples {
        let q = pose.rotation;
        let v = q.vec();
        writeln!(
            f,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t,
            pose.translation.x,
            pose.translation.y,
            pose.translation.z,
            v.x,
            v.y,
            v.z,
            q.w()
        )?;
    }
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, EvalError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut traj = Trajectory::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() != 8 {
            return Err(EvalError::Parse {
                path: display,
                line: lineno,
                msg: format!("expected 8 fields `t x y z qx qy qz qw`, got {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 8];
        for (k, field) in fields.iter().enumerate() {
            v[k] = field.parse().map_err(|e| EvalError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("field {}: {e}", k + 1),
            })?;
        }
        if let Some((prev, _)) = traj.samples.last() {
            if v[0] <= *prev {
                return Err(EvalError::NonMonotonic { index: traj.len(), t: v[0] });
            }
        }
        traj.push(v[0], PoseSE3::new(UnitQuat::new(v[7], v[4], v[5], v[6]), Vec3::new(v[1], v[2], v[3])));
    }
    if traj.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    Ok(traj)
}
