//! Ringed scans: ring assignment from elevation and per-ring surface-normal
//! estimation.

use crate::geometry::{Mat3, Vec3};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("empty scan")]
    EmptyScan,
    #[error("ring index {ring} out of range for a {num_rings}-ring sensor")]
    RingOutOfRange { ring: u32, num_rings: u32 },
    #[error("{path}:{line}: malformed scan CSV line: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("scan I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub xyz: Vec3,
    pub ring: u32,
    /// Unit surface normal, sensor frame, oriented toward the sensor origin.
    pub normal: Option<Vec3>,
}

/// One LiDAR sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RingedScan {
    /// Sweep timestamp, seconds.
    pub t: f64,
    pub points: Vec<ScanPoint>,
}

impl RingedScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_normals(&self) -> impl Iterator<Item = (&ScanPoint, &Vec3)> {
        self.points.iter().filter_map(|p| p.normal.as_ref().map(|n| (p, n)))
    }
}

/// Vertical layout of the spinning sensor: how elevations map to rings.
#[derive(Debug, Clone, Copy)]
pub struct RingLayout {
    pub num_rings: u32,
    /// Elevation of ring 0 (the lowest), degrees.
    pub fov_min_deg: f64,
    /// Elevation of the top ring, degrees.
    pub fov_max_deg: f64,
    /// Acceptance margin beyond the FOV before a point is dropped, degrees.
    pub margin_deg: f64,
}

impl Default for RingLayout {
    fn default() -> Self {
        RingLayout { num_rings: 16, fov_min_deg: -15.0, fov_max_deg: 15.0, margin_deg: 0.5 }
    }
}

impl RingLayout {
    pub fn ring_spacing_deg(&self) -> f64 {
        (self.fov_max_deg - self.fov_min_deg) / (self.num_rings as f64 - 1.0)
    }

    /// Nearest ring bin for an elevation (degrees), or `None` outside the
    /// FOV plus margin.
    pub fn ring_for_elevation(&self, elev_deg: f64) -> Option<u32> {
        let half_bin = 0.5 * self.ring_spacing_deg();
        if elev_deg < self.fov_min_deg - half_bin.min(self.margin_deg)
            || elev_deg > self.fov_max_deg + half_bin.min(self.margin_deg)
        {
            // Outside the outer bin edges; the margin only softens the ends.
            if elev_deg < self.fov_min_deg - self.margin_deg
                || elev_deg > self.fov_max_deg + self.margin_deg
            {
                return None;
            }
        }
        let idx = ((elev_deg - self.fov_min_deg) / self.ring_spacing_deg()).round();
        let idx = idx.clamp(0.0, self.num_rings as f64 - 1.0);
        Some(idx as u32)
    }
}

/// Result of casting raw points into rings.
#[derive(Debug, Clone)]
pub struct RingAssignment {
    pub scan: RingedScan,
    /// Points dropped for falling outside the FOV plus margin.
    pub dropped: usize,
}

/// Assign rings from provided channels where present, otherwise from the
/// elevation angle binned over the sensor FOV (bottom-up: lowest elevation
/// is ring 0).
pub fn assign_rings(
    t: f64,
    points: &[(Vec3, Option<u32>)],
    layout: &RingLayout,
) -> Result<RingAssignment, ScanError> {
    if points.is_empty() {
        return Err(ScanError::EmptyScan);
    }
    let mut scan = RingedScan { t, points: Vec::with_capacity(points.len()) };
    let mut dropped = 0usize;
    for (xyz, channel) in points {
        let ring = match channel {
            Some(r) => {
                if *r >= layout.num_rings {
                    return Err(ScanError::RingOutOfRange { ring: *r, num_rings: layout.num_rings });
                }
                *r
            }
            None => {
                let elev_deg = xyz.z.atan2(xyz.xy().norm()).to_degrees();
                match layout.ring_for_elevation(elev_deg) {
                    Some(r) => r,
                    None => {
                        dropped += 1;
                        continue;
                    }
                }
            }
        };
        scan.points.push(ScanPoint { xyz: *xyz, ring, normal: None });
    }
    Ok(RingAssignment { scan, dropped })
}

/// Parameters of the ring-aware normal estimation.
#[derive(Debug, Clone, Copy)]
pub struct NormalParams {
    /// Neighbors taken per ring (own ring and each adjacent ring).
    pub k: usize,
    /// Neighborhoods whose smallest-to-middle eigenvalue ratio exceeds this
    /// look like a line (or noise ball) and get no normal.
    pub line_ratio: f64,
    /// Neighbors needed before a normal is attempted.
    pub min_neighbors: usize,
}

impl Default for NormalParams {
    fn default() -> Self {
        NormalParams { k: 5, line_ratio: 0.05, min_neighbors: 4 }
    }
}

/// Per-point surface normals from ring-structured neighborhoods.
///
/// For each point the neighborhood is its `k` nearest points (3-D distance)
/// in its own ring plus `k` nearest in each adjacent ring. The normal is
/// the smallest-eigenvalue eigenvector of the neighborhood covariance,
/// flipped toward the sensor origin. Degenerate neighborhoods (too few
/// points, no planar spread) are left without a normal.
pub fn compute_normals(scan: &RingedScan, params: &NormalParams) -> RingedScan {
    let num_rings = scan.points.iter().map(|p| p.ring).max().map_or(0, |m| m + 1);
    let mut by_ring: Vec<Vec<usize>> = vec![Vec::new(); num_rings as usize];
    for (i, p) in scan.points.iter().enumerate() {
        by_ring[p.ring as usize].push(i);
    }

    let mut out = scan.clone();
    let mut neighbors: Vec<(f64, usize)> = Vec::new();
    let mut picked: Vec<usize> = Vec::new();
    for (i, p) in scan.points.iter().enumerate() {
        picked.clear();
        let ring = p.ring as i64;
        for r in [ring - 1, ring, ring + 1] {
            if r < 0 || r >= num_rings as i64 {
                continue;
            }
            neighbors.clear();
            for &j in &by_ring[r as usize] {
                if j == i {
                    continue;
                }
                neighbors.push(((scan.points[j].xyz - p.xyz).norm_squared(), j));
            }
            let take = params.k.min(neighbors.len());
            // (distance, index) ordering keeps ties deterministic.
            neighbors.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            picked.extend(neighbors[..take].iter().map(|&(_, j)| j));
        }
        if picked.len() < params.min_neighbors {
            continue;
        }
        let mut mean = p.xyz;
        for &j in &picked {
            mean += scan.points[j].xyz;
        }
        mean /= (picked.len() + 1) as f64;
        let mut cov = Mat3::zeros();
        let d0 = p.xyz - mean;
        cov += d0 * d0.transpose();
        for &j in &picked {
            let d = scan.points[j].xyz - mean;
            cov += d * d.transpose();
        }
        cov /= (picked.len() + 1) as f64;

        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_unstable_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let (l_min, l_mid, l_max) =
            (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        // No planar spread at all, or line-like spread: no normal.
        if l_mid <= 1e-9 * l_max.max(1e-12) {
            continue;
        }
        if l_min / l_mid > params.line_ratio {
            continue;
        }
        let mut n = eig.eigenvectors.column(order[0]).into_owned();
        n.normalize_mut();
        // Orient toward the sensor at the origin of the scan frame.
        if n.dot(&p.xyz) > 0.0 {
            n = -n;
        }
        out.points[i].normal = Some(n);
    }
    out
}

const SCAN_CSV_HEADER: &str = "x,y,z,ring";

/// Write one sweep as `x,y,z,ring` CSV with header (normals are derived
/// data and are not persisted).
pub fn write_scan_csv(path: &Path, scan: &RingedScan) -> Result<(), ScanError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SCAN_CSV_HEADER}")?;
    for p in &scan.points {
        writeln!(f, "{:.9},{:.9},{:.9},{}", p.xyz.x, p.xyz.y, p.xyz.z, p.ring)?;
    }
    Ok(())
}

/// Read one sweep written by [`write_scan_csv`]; the timestamp comes from
/// the caller (encoded in the filename).
pub fn read_scan_csv(path: &Path, t: f64) -> Result<RingedScan, ScanError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != SCAN_CSV_HEADER {
                return Err(ScanError::Parse {
                    path: display,
                    line: lineno,
                    msg: format!("expected header '{SCAN_CSV_HEADER}', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(ScanError::Parse {
                path: display,
                line: lineno,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, which: &str| -> Result<f64, ScanError> {
            s.trim().parse().map_err(|e| ScanError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("{which}: {e}"),
            })
        };
        let x = parse_f(fields[0], "x")?;
        let y = parse_f(fields[1], "y")?;
        let z = parse_f(fields[2], "z")?;
        let ring: u32 = fields[3].trim().parse().map_err(|e| ScanError::Parse {
            path: display.clone(),
            line: lineno,
            msg: format!("ring: {e}"),
        })?;
        points.push(ScanPoint { xyz: Vec3::new(x, y, z), ring, normal: None });
    }
    if points.is_empty() {
        return Err(ScanError::EmptyScan);
    }
    Ok(RingedScan { t, points })
}
