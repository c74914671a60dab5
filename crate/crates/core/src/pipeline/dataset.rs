//! Dataset directory layout: `imu.csv`, `scans/<t_ns>.csv`, `gt.txt`,
//! `meta.txt`. Simulation writes it, the run loop consumes it.

use super::config::PipelineConfig;
use crate::eval::{write_trajectory, Trajectory as EvalTrajectory};
use crate::frontend::{read_scan_csv, write_scan_csv, RingedScan};
use crate::geometry::PoseSE3;
use crate::imu::write_imu_csv;
use crate::sim::{
    preset_by_name, synth_imu, synth_scan, BiasSpec, Degradation, Trajectory,
};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown preset `{0}` (available: room, corridor, staircase, outdoor-turn)")]
    UnknownPreset(String),
    #[error("scan filename `{0}` does not carry a nanosecond timestamp")]
    BadScanName(String),
    #[error(transparent)]
    Imu(#[from] crate::imu::ImuError),
    #[error(transparent)]
    Scan(#[from] crate::frontend::ScanError),
    #[error(transparent)]
    ImuSynth(#[from] crate::sim::ImuSynthError),
    #[error(transparent)]
    LidarSim(#[from] crate::sim::LidarSimError),
    #[error(transparent)]
    Trajectory(#[from] crate::sim::TrajectoryError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub dir: PathBuf,
    pub imu_samples: usize,
    pub scans: usize,
    pub preset: String,
    pub seed: u64,
    pub degradation: Degradation,
}

fn scan_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(index).wrapping_mul(0xBF58476D1CE4E5B9)
}

/// Simulate one dataset into `out_dir`. Deterministic for a fixed config.
pub fn simulate_dataset(cfg: &PipelineConfig, out_dir: &Path) -> Result<DatasetSummary, DatasetError> {
    let preset = preset_by_name(&cfg.sim_preset)
        .ok_or_else(|| DatasetError::UnknownPreset(cfg.sim_preset.clone()))?;
    let traj = Trajectory::build(&preset.trajectory)?;

    std::fs::create_dir_all(out_dir.join("scans"))?;

    // IMU stream.
    let bias = BiasSpec { ba0: cfg.sim_ba0, bg0: cfg.sim_bg0 };
    let samples = synth_imu(&traj, cfg.imu_rate_hz, &cfg.noise, &bias, cfg.sim_seed)?;
    write_imu_csv(&out_dir.join("imu.csv"), &samples)?;

    // Scans on an exact nanosecond grid; the filename carries the timestamp.
    let scan_step_ns = (1e9 / cfg.lidar.spin_hz).round() as i64;
    let start_ns = (traj.start_time() * 1e9).round() as i64;
    let end_ns = (traj.end_time() * 1e9).round() as i64;
    let ext_pose = PoseSE3::new(cfg.extrinsics.q_il, cfg.extrinsics.p_il);
    let mut n_scans = 0u64;
    let mut t_ns = start_ns;
    while t_ns <= end_ns {
        let t = t_ns as f64 / 1e9;
        let gt = traj.sample(t)?;
        let lidar_pose = gt.pose.compose(&ext_pose);
        let mut scan = synth_scan(
            &preset.world,
            &lidar_pose,
            &cfg.lidar,
            cfg.sim_degradation,
            scan_seed(cfg.sim_seed, n_scans),
        )?;
        scan.t = t;
        write_scan_csv(&out_dir.join("scans").join(format!("{:019}.csv", t_ns)), &scan)?;
        n_scans += 1;
        t_ns += scan_step_ns;
    }

    // Body-frame ground truth at IMU rate.
    let mut gt_traj = EvalTrajectory::default();
    for s in &samples {
        let gt = traj.sample(s.t)?;
        gt_traj.push(s.t, gt.pose);
    }
    write_trajectory(&out_dir.join("gt.txt"), &gt_traj)?;

    // Sensor model + seeds, same flat key=value format as the config.
    let mut meta = std::io::BufWriter::new(std::fs::File::create(out_dir.join("meta.txt"))?);
    writeln!(meta, "sim.preset = {}", preset.name)?;
    writeln!(meta, "sim.seed = {}", cfg.sim_seed)?;
    writeln!(meta, "sim.degradation = {}", cfg.sim_degradation.name())?;
    writeln!(meta, "imu.rate_hz = {}", cfg.imu_rate_hz)?;
    writeln!(meta, "lidar.rate_hz = {}", cfg.lidar.spin_hz)?;
    writeln!(meta, "lidar.num_rings = {}", cfg.lidar.num_rings)?;
    writeln!(meta, "lidar.azimuth_step_deg = {}", cfg.lidar.azimuth_step_deg)?;
    writeln!(meta, "lidar.range_sigma = {}", cfg.lidar.range_sigma)?;
    writeln!(meta, "imu.sigma_na = {}", cfg.noise.sigma_na.x)?;
    writeln!(meta, "imu.sigma_nw = {}", cfg.noise.sigma_nw.x)?;
    let q = cfg.extrinsics.q_il.as_wxyz();
    writeln!(meta, "extrinsics.qw_qx_qy_qz = {} {} {} {}", q[0], q[1], q[2], q[3])?;
    writeln!(
        meta,
        "extrinsics.px_py_pz = {} {} {}",
        cfg.extrinsics.p_il.x, cfg.extrinsics.p_il.y, cfg.extrinsics.p_il.z
    )?;

    Ok(DatasetSummary {
        dir: out_dir.to_path_buf(),
        imu_samples: samples.len(),
        scans: n_scans as usize,
        preset: preset.name.to_string(),
        seed: cfg.sim_seed,
        degradation: cfg.sim_degradation,
    })
}

/// Scan files sorted by their nanosecond timestamp.
pub fn list_scans(dataset_dir: &Path) -> Result<Vec<(f64, PathBuf)>, DatasetError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dataset_dir.join("scans"))? {
        let entry = entry?;
        let path = entry.path();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let t_ns: i64 = name.parse().map_err(|_| DatasetError::BadScanName(name.clone()))?;
        out.push((t_ns as f64 / 1e9, path));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

pub fn load_scan(path: &Path, t: f64) -> Result<RingedScan, DatasetError> {
    Ok(read_scan_csv(path, t)?)
}
