//! Two-stage scan matching with mismatch rejection: scan-to-scan odometry,
//! scan-to-map refinement, then a consistency gate that skips the scan (and
//! leaves all buffers untouched) when the two disagree.

use super::icp::{icp_point_to_plane, IcpDiagnostics, IcpError, IcpParams, TargetCloud};
use super::map::{LocalMap, MapParams};
use super::scan::{compute_normals, NormalParams, RingedScan};
use crate::geometry::{PoseSE3, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("frontend not initialized: first scan must seed the map")]
    NotInitialized,
    #[error(transparent)]
    Icp(#[from] IcpError),
}

#[derive(Debug, Clone, Copy)]
pub struct MismatchThreshold {
    /// Translation discrepancy between the map-predicted and map-matched
    /// pose above which the scan is rejected, m.
    pub translation: f64,
    /// Rotation discrepancy limit, degrees.
    pub rotation_deg: f64,
}

impl Default for MismatchThreshold {
    fn default() -> Self {
        MismatchThreshold { translation: 0.5, rotation_deg: 5.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatcherParams {
    pub icp: IcpParams,
    pub map: MapParams,
    pub normals: NormalParams,
    pub mismatch: MismatchThreshold,
}

impl Default for MatcherParams {
    fn default() -> Self {
        MatcherParams {
            icp: IcpParams::default(),
            map: MapParams::default(),
            normals: NormalParams::default(),
            mismatch: MismatchThreshold::default(),
        }
    }
}

/// Outcome of matching one scan.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Scan-to-scan transform (current scan frame relative to the last).
    pub t_last_curr: PoseSE3,
    /// Scan-to-map transform (current scan frame in the local map frame).
    pub t_local_curr: PoseSE3,
    pub converged: bool,
    /// Downstream optimization must skip this scan.
    pub mismatch: bool,
    /// Why the scan was rejected, when it was.
    pub cause: Option<String>,
    /// Final point-to-plane RMS of the mapping stage, m.
    pub rms: f64,
    /// Total ICP iterations across both stages.
    pub iterations: usize,
    pub odometry: Option<IcpDiagnostics>,
    pub mapping: Option<IcpDiagnostics>,
}

impl MatchResult {
    fn rejected(cause: String, t_init: &PoseSE3, t_local_init: &PoseSE3) -> Self {
        MatchResult {
            t_last_curr: *t_init,
            t_local_curr: *t_local_init,
            converged: false,
            mismatch: true,
            cause: Some(cause),
            rms: f64::INFINITY,
            iterations: 0,
            odometry: None,
            mapping: None,
        }
    }
}

/// A match plus the data needed to commit it to the frontend buffers.
pub struct MatchStep {
    pub result: MatchResult,
    /// Current scan with normals, ready to become the next `L_last` and to
    /// be merged into the map (only on acceptance).
    pub scan_with_normals: Option<RingedScan>,
}

/// One matching step against immutable inputs (nothing is modified here;
/// [`Frontend::process`] commits accepted steps).
pub fn match_scan(
    t_init: &PoseSE3,
    t_local_last: &PoseSE3,
    l_curr: &RingedScan,
    l_last: &RingedScan,
    map: &LocalMap,
    params: &MatcherParams,
) -> Result<MatchStep, MatcherError> {
    let source: Vec<Vec3> = l_curr.points.iter().map(|p| p.xyz).collect();

    // Odometry: current scan against the last accepted scan.
    let odo_target = TargetCloud::new(
        l_last.with_normals().map(|(p, n)| (p.xyz, *n)),
        params.icp.max_corr_dist,
    );
    let t_local_init_guess = t_local_last.compose(t_init);
    let odo_target = match odo_target {
        Ok(t) => t,
        Err(e) => {
            return Ok(MatchStep {
                result: MatchResult::rejected(format!("odometry target: {e}"), t_init, &t_local_init_guess),
                scan_with_normals: None,
            })
        }
    };
    let (t_last_curr, odo_diag) = match icp_point_to_plane(&source, &odo_target, t_init, &params.icp) {
        Ok(v) => v,
        Err(e) => {
            return Ok(MatchStep {
                result: MatchResult::rejected(format!("odometry ICP: {e}"), t_init, &t_local_init_guess),
                scan_with_normals: None,
            })
        }
    };

    // Mapping: current scan against the local map, seeded by the odometry
    // estimate chained onto the last map pose.
    let map_init = t_local_last.compose(&t_last_curr);
    let map_target = match TargetCloud::new(
        map.points().iter().map(|p| (p.xyz, p.normal)),
        params.icp.max_corr_dist,
    ) {
        Ok(t) => t,
        Err(e) => {
            return Ok(MatchStep {
                result: MatchResult::rejected(format!("map target: {e}"), t_init, &map_init),
                scan_with_normals: None,
            })
        }
    };
    let (t_local_curr, map_diag) = match icp_point_to_plane(&source, &map_target, &map_init, &params.icp) {
        Ok(v) => v,
        Err(e) => {
            return Ok(MatchStep {
                result: MatchResult::rejected(format!("mapping ICP: {e}"), t_init, &map_init),
                scan_with_normals: None,
            })
        }
    };

    // Consistency gate between the chained prediction and the map match.
    let disc = map_init.between(&t_local_curr);
    let (dt, dr) = (disc.translation.norm(), disc.rotation.angle().to_degrees());
    if dt > params.mismatch.translation || dr > params.mismatch.rotation_deg {
        let mut r = MatchResult::rejected(
            format!(
                "pose discrepancy {:.3} m / {:.2} deg exceeds ({} m, {} deg)",
                dt, dr, params.mismatch.translation, params.mismatch.rotation_deg
            ),
            t_init,
            &map_init,
        );
        r.t_last_curr = t_last_curr;
        r.t_local_curr = t_local_curr;
        r.iterations = odo_diag.iterations + map_diag.iterations;
        r.odometry = Some(odo_diag);
        r.mapping = Some(map_diag);
        return Ok(MatchStep { result: r, scan_with_normals: None });
    }

    let with_normals = compute_normals(l_curr, &params.normals);
    Ok(MatchStep {
        result: MatchResult {
            t_last_curr,
            t_local_curr,
            converged: odo_diag.converged && map_diag.converged,
            mismatch: false,
            cause: None,
            rms: map_diag.rms,
            iterations: odo_diag.iterations + map_diag.iterations,
            odometry: Some(odo_diag),
            mapping: Some(map_diag),
        },
        scan_with_normals: Some(with_normals),
    })
}

/// Sequential matcher state: local map, last accepted scan and its map pose.
pub struct Frontend {
    pub params: MatcherParams,
    map: LocalMap,
    last_scan: Option<RingedScan>,
    t_local_last: PoseSE3,
}

/// What [`Frontend::process`] did with a scan.
#[derive(Debug, Clone)]
pub enum MatchOutcome {
    /// First scan: map seeded at identity, odometry starts on the next.
    Initialized,
    Matched(MatchResult),
}

impl Frontend {
    pub fn new(params: MatcherParams) -> Self {
        Frontend {
            map: LocalMap::new(params.map),
            params,
            last_scan: None,
            t_local_last: PoseSE3::identity(),
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.last_scan.is_some()
    }

    pub fn map(&self) -> &LocalMap {
        &self.map
    }

    pub fn t_local_last(&self) -> &PoseSE3 {
        &self.t_local_last
    }

    pub fn last_scan(&self) -> Option<&RingedScan> {
        self.last_scan.as_ref()
    }

    /// Match one scan with the given initial relative-pose guess; commits
    /// buffers only when the scan is accepted.
    pub fn process(&mut self, scan: &RingedScan, t_init: &PoseSE3) -> Result<MatchOutcome, MatcherError> {
        if self.last_scan.is_none() {
            let with_normals = compute_normals(scan, &self.params.normals);
            let pairs: Vec<(Vec3, Vec3)> =
                with_normals.with_normals().map(|(p, n)| (p.xyz, *n)).collect();
            self.map.merge_and_crop(&pairs, &PoseSE3::identity());
            self.last_scan = Some(with_normals);
            self.t_local_last = PoseSE3::identity();
            return Ok(MatchOutcome::Initialized);
        }
        let step = match_scan(
            t_init,
            &self.t_local_last,
            scan,
            self.last_scan.as_ref().unwrap(),
            &self.map,
            &self.params,
        )?;
        if let (false, Some(with_normals)) = (step.result.mismatch, step.scan_with_normals) {
            let pairs: Vec<(Vec3, Vec3)> =
                with_normals.with_normals().map(|(p, n)| (p.xyz, *n)).collect();
            self.map.merge_and_crop(&pairs, &step.result.t_local_curr);
            self.last_scan = Some(with_normals);
            self.t_local_last = step.result.t_local_curr;
        }
        Ok(MatchOutcome::Matched(step.result))
    }
}
