//! The end-to-end replay loop: propagate IMU state to each scan time as the
//! matching initial guess, match, and on success optimize the sliding
//! window; mismatched scans keep their IMU prediction and touch nothing.

use super::config::PipelineConfig;
use super::dataset::{list_scans, load_scan, DatasetError};
use crate::eval::{write_trajectory, EvalError, Trajectory as EvalTrajectory};
use crate::frontend::{Frontend, MatchOutcome, MatcherError};
use crate::geometry::{PoseSE3, Vec3};
use crate::imu::{
    align_from_gravity, propagate_full, read_imu_csv, stream_segments, ImuError, ImuSample,
    ImuState, NoiseParams, Segment,
};
use crate::optimizer::{
    optimize_window, Extrinsics, OptimizeReport, OptimizerError, PimConstraint, PoseConstraint,
    RelativePoseMeas, WindowProblem,
};
use crate::preint::{pim_integrate_segments, Pim, PreintError};
use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("IMU stream gap of {dt:.3}s between t={t0:.6} and t={t1:.6} exceeds {max:.3}s")]
    StreamGap { t0: f64, t1: f64, dt: f64, max: f64 },
    #[error("scan at t={scan_t:.6} lies outside the IMU stream span [{imu0:.6}, {imu1:.6}]")]
    ScanOutsideImuSpan { scan_t: f64, imu0: f64, imu1: f64 },
    #[error("dataset has no scans")]
    NoScans,
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Preint(#[from] PreintError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("pipeline I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-scan outcome in the run report.
#[derive(Debug, Clone)]
pub struct ScanSummary {
    pub t: f64,
    pub kind: ScanKind,
    /// Mapping-stage RMS for accepted scans, m.
    pub rms: f64,
    pub icp_iterations: usize,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    Initialization,
    Matched,
    Skipped,
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub imu_secs: f64,
    pub matching_secs: f64,
    pub optimization_secs: f64,
    pub io_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct WindowSummary {
    pub t: f64,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Secondary laser-only pass statistics (when the fused run also emits it).
#[derive(Debug, Clone)]
pub struct LaserPassSummary {
    pub matches: usize,
    pub skips: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scans: usize,
    pub matches: usize,
    pub skips: usize,
    pub per_scan: Vec<ScanSummary>,
    pub windows: Vec<WindowSummary>,
    pub outputs: Vec<PathBuf>,
    pub timings: StageTimings,
    pub fused: bool,
    pub laser_only_pass: Option<LaserPassSummary>,
}

impl RunReport {
    fn new(fused: bool) -> Self {
        RunReport {
            scans: 0,
            matches: 0,
            skips: 0,
            per_scan: Vec::new(),
            windows: Vec::new(),
            outputs: Vec::new(),
            timings: StageTimings::default(),
            fused,
            laser_only_pass: None,
        }
    }
}

fn body_pose(x: &ImuState) -> PoseSE3 {
    PoseSE3::new(x.q, x.p)
}

/// Laser-only estimator: frontend with constant-velocity initial guesses,
/// no optimization.
struct LaserEstimator {
    frontend: Frontend,
    prev_rel: PoseSE3,
    ext: PoseSE3,
    traj: EvalTrajectory,
    matches: usize,
    skips: usize,
}

impl LaserEstimator {
    fn new(cfg: &PipelineConfig) -> Self {
        LaserEstimator {
            frontend: Frontend::new(cfg.matcher),
            prev_rel: PoseSE3::identity(),
            ext: PoseSE3::new(cfg.extrinsics.q_il, cfg.extrinsics.p_il),
            traj: EvalTrajectory::default(),
            matches: 0,
            skips: 0,
        }
    }

    fn lidar_to_body(&self, t_local: &PoseSE3) -> PoseSE3 {
        self.ext.compose(t_local).compose(&self.ext.inverse())
    }

    fn process(
        &mut self,
        scan: &crate::frontend::RingedScan,
        summaries: Option<&mut Vec<ScanSummary>>,
    ) -> Result<ScanKind, PipelineError> {
        let t = scan.t;
        let kind = match self.frontend.process(scan, &self.prev_rel.clone())? {
            MatchOutcome::Initialized => {
                self.traj.push(t, PoseSE3::identity());
                ScanKind::Initialization
            }
            MatchOutcome::Matched(res) => {
                if res.mismatch {
                    self.skips += 1;
                    // Constant-velocity bridge; buffers stay as they were.
                    let predicted = self.frontend.t_local_last().compose(&self.prev_rel);
                    self.traj.push(t, self.lidar_to_body(&predicted));
                    if let Some(s) = summaries {
                        s.push(ScanSummary {
                            t,
                            kind: ScanKind::Skipped,
                            rms: f64::INFINITY,
                            icp_iterations: res.iterations,
                            cause: res.cause.clone(),
                        });
                    }
                    return Ok(ScanKind::Skipped);
                }
                self.matches += 1;
                self.prev_rel = res.t_last_curr;
                self.traj.push(t, self.lidar_to_body(&res.t_local_curr));
                if let Some(s) = summaries {
                    s.push(ScanSummary {
                        t,
                        kind: ScanKind::Matched,
                        rms: res.rms,
                        icp_iterations: res.iterations,
                        cause: None,
                    });
                }
                ScanKind::Matched
            }
        };
        if kind == ScanKind::Initialization {
            if let Some(s) = summaries {
                s.push(ScanSummary {
                    t,
                    kind: ScanKind::Initialization,
                    rms: 0.0,
                    icp_iterations: 0,
                    cause: None,
                });
            }
        }
        Ok(kind)
    }
}

/// Fused estimator: IMU prediction, matching, sliding-window optimization.
struct FusedEstimator<'a> {
    cfg: &'a PipelineConfig,
    samples: &'a [ImuSample],
    noise: NoiseParams,
    ext: Extrinsics,
    ext_pose: PoseSE3,
    frontend: Frontend,
    /// Optimized state at the last accepted scan.
    anchor: ImuState,
    window: VecDeque<ImuState>,
    pims: VecDeque<Pim>,
    lidar_meas: VecDeque<RelativePoseMeas>,
    fused_traj: EvalTrajectory,
    highrate_traj: EvalTrajectory,
    windows: Vec<WindowSummary>,
    matches: usize,
    skips: usize,
    imu_secs: f64,
    matching_secs: f64,
    optimization_secs: f64,
}

impl<'a> FusedEstimator<'a> {
    fn new(cfg: &'a PipelineConfig, samples: &'a [ImuSample], init: ImuState) -> Self {
        FusedEstimator {
            cfg,
            samples,
            noise: cfg.noise,
            ext: cfg.extrinsics,
            ext_pose: PoseSE3::new(cfg.extrinsics.q_il, cfg.extrinsics.p_il),
            frontend: Frontend::new(cfg.matcher),
            anchor: init,
            window: VecDeque::new(),
            pims: VecDeque::new(),
            lidar_meas: VecDeque::new(),
            fused_traj: EvalTrajectory::default(),
            highrate_traj: EvalTrajectory::default(),
            windows: Vec::new(),
            matches: 0,
            skips: 0,
            imu_secs: 0.0,
            matching_secs: 0.0,
            optimization_secs: 0.0,
        }
    }

    fn predict(&self, segs: &[Segment]) -> Result<ImuState, PipelineError> {
        let mut x = self.anchor;
        for seg in segs {
            x = propagate_full(&x, &seg.sample, seg.dt, &self.noise)?;
        }
        Ok(x)
    }

    /// Emit high-rate poses by re-propagating from an optimized state
    /// through the segments of one inter-scan interval.
    fn emit_highrate(&mut self, from: &ImuState, segs: &[Segment]) -> Result<(), PipelineError> {
        let mut x = *from;
        for seg in segs {
            x = propagate_full(&x, &seg.sample, seg.dt, &self.noise)?;
            self.highrate_traj.push(x.t, body_pose(&x));
        }
        Ok(())
    }

    fn process(
        &mut self,
        scan: &crate::frontend::RingedScan,
        summaries: &mut Vec<ScanSummary>,
    ) -> Result<ScanKind, PipelineError> {
        let t = scan.t;
        let t_imu = Instant::now();
        let segs = stream_segments(self.samples, self.anchor.t, t).unwrap_or_default();
        let predicted = self.predict(&segs)?;
        let pim = pim_integrate_segments(Pim::new(self.anchor.ba, self.anchor.bg), &segs, &self.noise)?;
        self.imu_secs += t_imu.elapsed().as_secs_f64();

        if !self.frontend.is_initialized() {
            let t_match = Instant::now();
            self.frontend.process(scan, &PoseSE3::identity())?;
            self.matching_secs += t_match.elapsed().as_secs_f64();
            self.anchor = predicted;
            self.window.push_back(predicted);
            self.fused_traj.push(t, body_pose(&predicted));
            self.highrate_traj.push(predicted.t, body_pose(&predicted));
            summaries.push(ScanSummary {
                t,
                kind: ScanKind::Initialization,
                rms: 0.0,
                icp_iterations: 0,
                cause: None,
            });
            return Ok(ScanKind::Initialization);
        }

        // Initial guess: relative LiDAR pose induced by the IMU prediction.
        let t_wl_prev = body_pose(&self.anchor).compose(&self.ext_pose);
        let t_wl_pred = body_pose(&predicted).compose(&self.ext_pose);
        let t_init = t_wl_prev.between(&t_wl_pred);

        let t_match = Instant::now();
        let outcome = self.frontend.process(scan, &t_init)?;
        self.matching_secs += t_match.elapsed().as_secs_f64();
        let MatchOutcome::Matched(res) = outcome else {
            unreachable!("frontend initialized above")
        };

        if res.mismatch {
            // Keep the IMU pose unchanged and return; nothing is committed.
            self.skips += 1;
            self.fused_traj.push(t, body_pose(&predicted));
            summaries.push(ScanSummary {
                t,
                kind: ScanKind::Skipped,
                rms: f64::INFINITY,
                icp_iterations: res.iterations,
                cause: res.cause.clone(),
            });
            return Ok(ScanKind::Skipped);
        }
        self.matches += 1;

        self.window.push_back(predicted);
        self.pims.push_back(pim);
        self.lidar_meas.push_back(RelativePoseMeas {
            q: res.t_last_curr.rotation,
            t: res.t_last_curr.translation,
        });
        while self.window.len() > self.cfg.window_size.max(2) {
            self.window.pop_front();
            self.pims.pop_front();
            self.lidar_meas.pop_front();
        }

        let t_opt = Instant::now();
        let (optimized, opt_report) = self.optimize()?;
        self.optimization_secs += t_opt.elapsed().as_secs_f64();
        for (slot, state) in optimized.into_iter().enumerate() {
            self.window[slot] = state;
        }
        let prev_anchor_idx = self.window.len() - 2;
        let prev_anchor = self.window[prev_anchor_idx];
        self.anchor = *self.window.back().unwrap();
        self.fused_traj.push(t, body_pose(&self.anchor));
        self.windows.push(WindowSummary {
            t,
            iterations: opt_report.iterations,
            initial_cost: opt_report.initial_cost,
            final_cost: opt_report.final_cost,
        });

        // High-rate output for the just-closed interval from the freshly
        // optimized previous anchor.
        let t_imu2 = Instant::now();
        self.emit_highrate(&prev_anchor, &segs)?;
        self.imu_secs += t_imu2.elapsed().as_secs_f64();

        summaries.push(ScanSummary {
            t,
            kind: ScanKind::Matched,
            rms: res.rms,
            icp_iterations: res.iterations,
            cause: None,
        });
        Ok(ScanKind::Matched)
    }

    fn optimize(&self) -> Result<(Vec<ImuState>, OptimizeReport), PipelineError> {
        let mut prob = WindowProblem::new(self.window.iter().copied().collect(), &self.noise);
        prob.extrinsics = self.ext;
        prob.gravity = self.noise.gravity;
        prob.pose_weights = self.cfg.pose_weights;
        for (k, pim) in self.pims.iter().enumerate() {
            prob.pims.push(PimConstraint { i: k, j: k + 1, pim: pim.clone() });
        }
        for (k, meas) in self.lidar_meas.iter().enumerate() {
            prob.poses.push(PoseConstraint { i: k, j: k + 1, meas: *meas });
        }
        Ok(optimize_window(&prob, &self.cfg.optimize)?)
    }

    /// Flush the high-rate stream through the samples after the last scan.
    fn finish(&mut self) -> Result<(), PipelineError> {
        let t_end = self.samples.last().map(|s| s.t).unwrap_or(self.anchor.t);
        if t_end > self.anchor.t {
            let segs = stream_segments(self.samples, self.anchor.t, t_end)?;
            let anchor = self.anchor;
            self.emit_highrate(&anchor, &segs)?;
        }
        Ok(())
    }
}

/// Initial state: gravity-aligned orientation plus stationary bias
/// estimates from the first stationary span of the stream.
fn initialize_state(samples: &[ImuSample], cfg: &PipelineConfig) -> ImuState {
    let t0 = samples[0].t;
    let t_end = t0 + cfg.init_stationary_secs;
    let mut mean_a = Vec3::zeros();
    let mut mean_w = Vec3::zeros();
    let mut n = 0usize;
    for s in samples.iter().take_while(|s| s.t <= t_end) {
        mean_a += s.accel;
        mean_w += s.gyro;
        n += 1;
    }
    if n == 0 {
        return ImuState::at_rest(t0);
    }
    mean_a /= n as f64;
    mean_w /= n as f64;
    let q0 = align_from_gravity(&mean_a);
    // Stationary residuals double as bias estimates: the gyro mean is pure
    // bias, and the accel mean minus re-projected gravity captures the
    // along-gravity accelerometer bias (the tangential part is absorbed by
    // the tilt alignment).
    let ba = mean_a - q0.rotate_inv(&cfg.noise.gravity);
    let mut x = ImuState::at_rest(t0);
    x.q = q0;
    x.ba = ba;
    x.bg = mean_w;
    x
}

/// Run the pipeline over a dataset directory.
///
/// With fusion enabled the run emits the fused trajectory, the high-rate
/// IMU trajectory and the laser-only baseline; with `no_imu_fusion` only
/// the laser-only trajectory is produced.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let t_total = Instant::now();
    cfg.validate_for_run()?;
    let mut report = RunReport::new(!cfg.no_imu_fusion);

    let t_io = Instant::now();
    let samples = read_imu_csv(&cfg.dataset_dir.join("imu.csv"))?;
    let scan_files = list_scans(&cfg.dataset_dir)?;
    report.timings.io_secs += t_io.elapsed().as_secs_f64();

    if scan_files.is_empty() {
        return Err(PipelineError::NoScans);
    }
    for w in samples.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt > cfg.max_stream_gap {
            return Err(PipelineError::StreamGap {
                t0: w[0].t,
                t1: w[1].t,
                dt,
                max: cfg.max_stream_gap,
            });
        }
    }
    let (imu0, imu1) = (samples[0].t, samples.last().unwrap().t);
    for (t, _) in &scan_files {
        if *t < imu0 - 1e-9 || *t > imu1 + 1e-9 {
            return Err(PipelineError::ScanOutsideImuSpan { scan_t: *t, imu0, imu1 });
        }
    }

    std::fs::create_dir_all(&cfg.output_dir)?;

    let init = initialize_state(&samples, cfg);
    let mut fused = (!cfg.no_imu_fusion).then(|| FusedEstimator::new(cfg, &samples, init));
    let mut laser = LaserEstimator::new(cfg);

    for (t, path) in &scan_files {
        let t_io = Instant::now();
        let scan = load_scan(path, *t)?;
        report.timings.io_secs += t_io.elapsed().as_secs_f64();

        report.scans += 1;
        if let Some(f) = fused.as_mut() {
            // The fused pass owns the primary per-scan summaries.
            match f.process(&scan, &mut report.per_scan)? {
                ScanKind::Matched => report.matches += 1,
                ScanKind::Skipped => report.skips += 1,
                ScanKind::Initialization => {}
            }
            let t_match = Instant::now();
            laser.process(&scan, None)?;
            report.timings.matching_secs += t_match.elapsed().as_secs_f64();
        } else {
            let t_match = Instant::now();
            match laser.process(&scan, Some(&mut report.per_scan))? {
                ScanKind::Matched => report.matches += 1,
                ScanKind::Skipped => report.skips += 1,
                ScanKind::Initialization => {}
            }
            report.timings.matching_secs += t_match.elapsed().as_secs_f64();
        }
    }

    let t_io = Instant::now();
    if let Some(f) = fused.as_mut() {
        f.finish()?;
        let fused_path = cfg.output_dir.join("traj_fused.txt");
        write_trajectory(&fused_path, &f.fused_traj)?;
        let hr_path = cfg.output_dir.join("traj_imu.txt");
        write_trajectory(&hr_path, &f.highrate_traj)?;
        report.outputs.push(fused_path);
        report.outputs.push(hr_path);
        report.windows = std::mem::take(&mut f.windows);
        report.timings.imu_secs = f.imu_secs;
        report.timings.matching_secs += f.matching_secs;
        report.timings.optimization_secs = f.optimization_secs;
        report.laser_only_pass =
            Some(LaserPassSummary { matches: laser.matches, skips: laser.skips });
    }
    let laser_path = cfg.output_dir.join("traj_laser.txt");
    write_trajectory(&laser_path, &laser.traj)?;
    report.outputs.push(laser_path);
    report.timings.io_secs += t_io.elapsed().as_secs_f64();
    report.timings.total_secs = t_total.elapsed().as_secs_f64();

    let t_io = Instant::now();
    write_report(cfg, &report)?;
    report.timings.io_secs += t_io.elapsed().as_secs_f64();
    Ok(report)
}

fn write_report(cfg: &PipelineConfig, report: &RunReport) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(cfg.output_dir.join("report.txt"))?);
    writeln!(f, "mode = {}", if report.fused { "fused" } else { "laser-only" })?;
    writeln!(f, "scans = {}", report.scans)?;
    writeln!(f, "matches = {}", report.matches)?;
    writeln!(f, "skips = {}", report.skips)?;
    if let Some(lp) = &report.laser_only_pass {
        writeln!(f, "laser_pass.matches = {}", lp.matches)?;
        writeln!(f, "laser_pass.skips = {}", lp.skips)?;
    }
    for out in &report.outputs {
        writeln!(f, "output = {}", out.display())?;
    }
    writeln!(f, "timing.imu_secs = {:.3}", report.timings.imu_secs)?;
    writeln!(f, "timing.matching_secs = {:.3}", report.timings.matching_secs)?;
    writeln!(f, "timing.optimization_secs = {:.3}", report.timings.optimization_secs)?;
    writeln!(f, "timing.io_secs = {:.3}", report.timings.io_secs)?;
    writeln!(f, "timing.total_secs = {:.3}", report.timings.total_secs)?;
    for s in &report.per_scan {
        writeln!(
            f,
            "scan t={:.3} {} rms={:.4} icp_iters={}{}",
            s.t,
            match s.kind {
                ScanKind::Initialization => "init",
                ScanKind::Matched => "matched",
                ScanKind::Skipped => "SKIPPED",
            },
            s.rms,
            s.icp_iterations,
            s.cause.as_deref().map(|c| format!(" cause: {c}")).unwrap_or_default()
        )?;
    }
    Ok(())
}
