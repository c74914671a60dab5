//! Local map upkeep (voxel-deduplicated, cropped around the current pose)
//! and the uniform-grid nearest-neighbor index used by ICP.

use crate::geometry::{PoseSE3, Vec3};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
pub struct MapParams {
    /// Voxel edge for deduplication, m.
    pub voxel_size: f64,
    /// Points farther than this from the current pose are discarded, m.
    pub crop_radius: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams { voxel_size: 0.2, crop_radius: 60.0 }
    }
}

/// One map point in the local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub xyz: Vec3,
    pub normal: Vec3,
}

/// Point map in the local frame, voxel-deduplicated (first point wins a
/// voxel) and cropped around the last maintenance pose. Points are stored
/// in insertion order so every run iterates identically.
#[derive(Debug, Clone)]
pub struct LocalMap {
    pub params: MapParams,
    /// Pose around which the map was last cropped.
    pub origin: PoseSE3,
    points: Vec<MapPoint>,
    occupied: HashMap<(i64, i64, i64), u32>,
}

impl LocalMap {
    pub fn new(params: MapParams) -> Self {
        LocalMap { params, origin: PoseSE3::identity(), points: Vec::new(), occupied: HashMap::new() }
    }

    fn key(&self, p: &Vec3) -> (i64, i64, i64) {
        let v = self.params.voxel_size;
        ((p.x / v).floor() as i64, (p.y / v).floor() as i64, (p.z / v).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    /// Merge a scan (points + normals in the scan frame) transformed by
    /// `pose` into the local frame, then crop around `pose`.
    pub fn merge_and_crop(&mut self, scan_points: &[(Vec3, Vec3)], pose: &PoseSE3) {
        for (p, n) in scan_points {
            let world_p = pose.transform_point(p);
            let world_n = pose.rotation.rotate(n);
            let key = self.key(&world_p);
            if let std::collections::hash_map::Entry::Vacant(e) = self.occupied.entry(key) {
                e.insert(self.points.len() as u32);
                self.points.push(MapPoint { xyz: world_p, normal: world_n });
            }
        }
        self.origin = *pose;
        let center = pose.translation;
        let r2 = self.params.crop_radius * self.params.crop_radius;
        if self.points.iter().any(|p| (p.xyz - center).norm_squared() > r2) {
            self.points.retain(|p| (p.xyz - center).norm_squared() <= r2);
            self.occupied.clear();
            for (idx, p) in self.points.iter().enumerate() {
                self.occupied.entry(self.key(&p.xyz)).or_insert(idx as u32);
            }
        }
    }
}

/// Uniform-grid index over a fixed point set; cells are sized to the query
/// radius so a nearest-neighbor lookup touches at most 27 cells.
#[derive(Debug)]
pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialGrid {
    pub fn build(points: impl Iterator<Item = Vec3>, cell: f64) -> (Self, Vec<Vec3>) {
        let mut grid = SpatialGrid { cell, cells: HashMap::new() };
        let mut stored = Vec::new();
        for p in points {
            let key = grid.key(&p);
            grid.cells.entry(key).or_default().push(stored.len() as u32);
            stored.push(p);
        }
        (grid, stored)
    }

    fn key(&self, p: &Vec3) -> (i64, i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    /// Index and squared distance of the nearest stored point within
    /// `self.cell` of the query, ties broken by lowest index.
    pub fn nearest(&self, points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
        let (kx, ky, kz) = self.key(query);
        let max_d2 = self.cell * self.cell;
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &idx in bucket {
                        let d2 = (points[idx as usize] - query).norm_squared();
                        if d2 <= max_d2 && best.map_or(true, |(bi, bd)| d2 < bd || (d2 == bd && (idx as usize) < bi)) {
                            best = Some((idx as usize, d2));
                        }
                    }
                }
            }
        }
        best
    }
}
