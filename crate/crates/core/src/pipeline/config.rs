//! Flat `key = value` configuration with dotted section prefixes. Every key
//! has a default; unknown keys and malformed lines are reported with their
//! line number.

use crate::frontend::{IcpParams, MapParams, MatcherParams, MismatchThreshold, NormalParams};
use crate::geometry::{UnitQuat, Vec3};
use crate::imu::{NoiseParams, QdMode};
use crate::optimizer::{Extrinsics, OptimizeOptions, PoseWeights};
use crate::sim::{Degradation, LidarModel};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("config key `{key}` = {value} must be positive")]
    NonPositive { key: &'static str, value: f64 },
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("config I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Dataset directory (imu.csv, scans/, gt.txt, meta.txt).
    pub dataset_dir: PathBuf,
    /// Output directory for trajectories, metrics and the run report.
    pub output_dir: PathBuf,

    pub imu_rate_hz: f64,
    pub noise: NoiseParams,
    /// Stationary span used for the initial gravity alignment, s.
    pub init_stationary_secs: f64,

    pub lidar: LidarModel,
    pub extrinsics: Extrinsics,

    pub window_size: usize,
    pub pose_weights: PoseWeights,
    pub optimize: OptimizeOptions,

    pub matcher: MatcherParams,

    /// Initial simulator biases.
    pub sim_ba0: Vec3,
    pub sim_bg0: Vec3,
    pub sim_seed: u64,
    pub sim_preset: String,
    pub sim_degradation: Degradation,

    pub no_imu_fusion: bool,
    /// Hard error when the IMU stream has a gap larger than this, s.
    pub max_stream_gap: f64,
    /// Association window for evaluation, s.
    pub eval_max_dt: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_dir: PathBuf::from("dataset"),
            output_dir: PathBuf::from("out"),
            imu_rate_hz: 200.0,
            noise: NoiseParams::default(),
            init_stationary_secs: 1.0,
            lidar: LidarModel::default(),
            extrinsics: Extrinsics::default(),
            window_size: 5,
            pose_weights: PoseWeights::default(),
            optimize: OptimizeOptions::default(),
            matcher: MatcherParams::default(),
            sim_ba0: Vec3::new(0.02, -0.015, 0.01),
            sim_bg0: Vec3::new(0.002, -0.001, 0.0015),
            sim_seed: 0,
            sim_preset: "corridor".to_string(),
            sim_degradation: Degradation::None,
            no_imu_fusion: false,
            max_stream_gap: 0.5,
            eval_max_dt: 0.02,
        }
    }
}

impl PipelineConfig {
    /// Parse a config file over the defaults.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_str(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("expected `key = value`, got `{stripped}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            self.set(key, value).map_err(|msg| ConfigError::Parse {
                path: origin.to_string(),
                line,
                msg,
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn f(value: &str) -> Result<f64, String> {
            value.parse().map_err(|e| format!("bad float `{value}`: {e}"))
        }
        fn u(value: &str) -> Result<usize, String> {
            value.parse().map_err(|e| format!("bad integer `{value}`: {e}"))
        }
        fn b(value: &str) -> Result<bool, String> {
            value.parse().map_err(|e| format!("bad bool `{value}`: {e}"))
        }
        match key {
            "dataset.dir" => self.dataset_dir = PathBuf::from(value),
            "output.dir" => self.output_dir = PathBuf::from(value),
            "imu.rate_hz" => self.imu_rate_hz = f(value)?,
            "imu.sigma_na" => self.noise.sigma_na = Vec3::repeat(f(value)?),
            "imu.sigma_nba" => self.noise.sigma_nba = Vec3::repeat(f(value)?),
            "imu.sigma_nw" => self.noise.sigma_nw = Vec3::repeat(f(value)?),
            "imu.sigma_nbw" => self.noise.sigma_nbw = Vec3::repeat(f(value)?),
            "imu.gravity_z" => self.noise.gravity = Vec3::new(0.0, 0.0, f(value)?),
            "imu.qd_full_integral" => {
                self.noise.qd_mode = if b(value)? { QdMode::Trapezoidal } else { QdMode::FirstOrderHold }
            }
            "imu.init_stationary_secs" => self.init_stationary_secs = f(value)?,
            "lidar.rate_hz" => self.lidar.spin_hz = f(value)?,
            "lidar.num_rings" => self.lidar.num_rings = u(value)? as u32,
            "lidar.fov_min_deg" => self.lidar.fov_min_deg = f(value)?,
            "lidar.fov_max_deg" => self.lidar.fov_max_deg = f(value)?,
            "lidar.azimuth_step_deg" => self.lidar.azimuth_step_deg = f(value)?,
            "lidar.max_range" => self.lidar.max_range = f(value)?,
            "lidar.range_sigma" => self.lidar.range_sigma = f(value)?,
            "extrinsics.qw_qx_qy_qz" => {
                let v = parse_vec::<4>(value)?;
                self.extrinsics.q_il = UnitQuat::new(v[0], v[1], v[2], v[3]);
            }
            "extrinsics.px_py_pz" => {
                let v = parse_vec::<3>(value)?;
                self.extrinsics.p_il = Vec3::new(v[0], v[1], v[2]);
            }
            "window.size" => self.window_size = u(value)?,
            "window.pose_sigma_t" => self.pose_weights.sigma_t = Vec3::repeat(f(value)?),
            "window.pose_sigma_r" => self.pose_weights.sigma_r = Vec3::repeat(f(value)?),
            "window.max_iterations" => self.optimize.max_iterations = u(value)?,
            "window.initial_lambda" => self.optimize.initial_lambda = f(value)?,
            "icp.max_iterations" => self.matcher.icp.max_iterations = u(value)?,
            "icp.update_epsilon" => self.matcher.icp.update_epsilon = f(value)?,
            "icp.max_corr_dist" => self.matcher.icp.max_corr_dist = f(value)?,
            "icp.trim_fraction" => self.matcher.icp.trim_fraction = f(value)?,
            "icp.degenerate_ratio" => self.matcher.icp.degenerate_ratio = f(value)?,
            "map.voxel_size" => self.matcher.map.voxel_size = f(value)?,
            "map.crop_radius" => self.matcher.map.crop_radius = f(value)?,
            "normals.k" => self.matcher.normals.k = u(value)?,
            "normals.line_ratio" => self.matcher.normals.line_ratio = f(value)?,
            "mismatch.translation" => self.matcher.mismatch.translation = f(value)?,
            "mismatch.rotation_deg" => self.matcher.mismatch.rotation_deg = f(value)?,
            "sim.ba0" => {
                let v = parse_vec::<3>(value)?;
                self.sim_ba0 = Vec3::new(v[0], v[1], v[2]);
            }
            "sim.bg0" => {
                let v = parse_vec::<3>(value)?;
                self.sim_bg0 = Vec3::new(v[0], v[1], v[2]);
            }
            "sim.seed" => self.sim_seed = value.parse().map_err(|e| format!("bad seed: {e}"))?,
            "sim.preset" => self.sim_preset = value.to_string(),
            "sim.degradation" => {
                self.sim_degradation =
                    Degradation::parse(value).ok_or_else(|| format!("unknown degradation `{value}`"))?
            }
            "run.no_imu_fusion" => self.no_imu_fusion = b(value)?,
            "run.max_stream_gap" => self.max_stream_gap = f(value)?,
            "eval.max_dt" => self.eval_max_dt = f(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Positive-tolerance checks shared by every command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positives: [(&'static str, f64); 10] = [
            ("imu.rate_hz", self.imu_rate_hz),
            ("lidar.rate_hz", self.lidar.spin_hz),
            ("lidar.max_range", self.lidar.max_range),
            ("icp.max_corr_dist", self.matcher.icp.max_corr_dist),
            ("icp.update_epsilon", self.matcher.icp.update_epsilon),
            ("map.voxel_size", self.matcher.map.voxel_size),
            ("map.crop_radius", self.matcher.map.crop_radius),
            ("mismatch.translation", self.matcher.mismatch.translation),
            ("mismatch.rotation_deg", self.matcher.mismatch.rotation_deg),
            ("eval.max_dt", self.eval_max_dt),
        ];
        for (key, value) in positives {
            if !(value > 0.0) {
                return Err(ConfigError::NonPositive { key, value });
            }
        }
        Ok(())
    }

    /// `run` additionally requires the dataset files to exist.
    pub fn validate_for_run(&self) -> Result<(), ConfigError> {
        self.validate()?;
        for p in [
            self.dataset_dir.clone(),
            self.dataset_dir.join("imu.csv"),
            self.dataset_dir.join("scans"),
        ] {
            if !p.exists() {
                return Err(ConfigError::MissingPath(p));
            }
        }
        Ok(())
    }
}

fn parse_vec<const N: usize>(value: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(format!("expected {N} space-separated floats, got {}", parts.len()));
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.parse().map_err(|e| format!("bad float `{p}`: {e}"))?;
    }
    Ok(out)
}
