//! LiDAR frontend: ring segmentation, per-ring normal estimation, two-stage
//! point-to-plane ICP with mismatch rejection, and local map upkeep.

pub mod icp;
pub mod map;
pub mod matcher;
pub mod scan;

pub use icp::{icp_point_to_plane, IcpDiagnostics, IcpError, IcpParams, TargetCloud};
pub use map::{LocalMap, MapParams, MapPoint, SpatialGrid};
pub use matcher::{
    match_scan, Frontend, MatchOutcome, MatchResult, MatchStep, MatcherError, MatcherParams,
    MismatchThreshold,
};
pub use scan::{
    assign_rings, compute_normals, read_scan_csv, write_scan_csv, NormalParams, RingAssignment,
    RingLayout, RingedScan, ScanError, ScanPoint,
};
