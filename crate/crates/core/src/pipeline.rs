//! Event loop tying the filter, the radar updates, the local map and the
//! optional prior-map localizer together.
//!
//! Per scan: propagate to the scan time, gate detections on Doppler, apply the
//! Doppler update, SNR-filter the static detections, run the iterated
//! scan-matching update, grow the local map and, every few scans, match a
//! keyframe against the prior map.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::Vector3;

use crate::config::{Config, Mode};
use crate::dataset::{Dataset, StampedPose};
use crate::error::{Error, Result};
use crate::ins::{initialize, propagate_covariance, propagate_nominal, ErrorCovariance, ExternalPose, ImuSample, NavState, MAX_STEP};
use crate::localizer::{prior_map_update, KeyframeAccumulator, KeyframeInput, PriorMap};
use crate::matcher::{scan_match_update, snr_filter, LocalMap, MatchPoint};
use crate::par::ExecPolicy;
use crate::radar::{doppler_update, gate_doppler, ransac_ego_velocity, RadarScan};
use crate::timing::{Stage, TimingReport};

pub use crate::config::Mode as RunMode;

/// What happened while processing one scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanReport {
    pub time: f64,
    /// Indices into the scan rejected by the Doppler gate.
    pub doppler_outliers: Vec<usize>,
    pub doppler_inliers: usize,
    pub doppler_updated: bool,
    /// Points left after SNR filtering.
    pub match_candidates: usize,
    /// Matches kept at the first iterate; `None` when matching did not run.
    pub matches: Option<usize>,
    pub match_iterations: usize,
    pub map_size: usize,
    /// Keyframe points and matches when a prior-map update was attempted.
    pub prior_update: Option<(usize, usize)>,
}

/// Non-scan events in time order.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Initialized { time: f64, samples: usize, velocity: Vector3<f64> },
    SkippedBeforeInit { time: f64 },
    SensorGap { sensor: &'static str, from: f64, to: f64 },
    Scan(ScanReport),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Vec<StampedPose>,
    pub events: Vec<Event>,
    pub timing: TimingReport,
    pub final_state: Option<(NavState, ErrorCovariance)>,
}

impl RunOutput {
    pub fn scan_reports(&self) -> impl Iterator<Item = &ScanReport> {
        self.events.iter().filter_map(|e| match e {
            Event::Scan(r) => Some(r),
            _ => None,
        })
    }

    /// Deterministic text log (no wall-clock times).
    pub fn event_log(&self, mode: Mode) -> String {
        let mut s = format!("run mode={mode}\n");
        for e in &self.events {
            match e {
                Event::Initialized { time, samples, velocity } => {
                    let _ = writeln!(s, "{time:.6} init samples={samples} velocity={:.6},{:.6},{:.6}", velocity.x, velocity.y, velocity.z);
                }
                Event::SkippedBeforeInit { time } => {
                    let _ = writeln!(s, "{time:.6} scan skipped before init");
                }
                Event::SensorGap { sensor, from, to } => {
                    let _ = writeln!(s, "{to:.6} warn {sensor} gap {:.3} s since {from:.6}", to - from);
                }
                Event::Scan(r) => {
                    let _ = write!(
                        s,
                        "{:.6} scan mode={mode} doppler_inliers={} doppler_outliers={} doppler_update={} candidates={}",
                        r.time,
                        r.doppler_inliers,
                        r.doppler_outliers.len(),
                        r.doppler_updated,
                        r.match_candidates
                    );
                    match r.matches {
                        Some(m) => {
                            let _ = write!(s, " matches={m} iterations={}", r.match_iterations);
                            if r.match_iterations == 0 {
                                s.push_str(" match_skipped=insufficient");
                            }
                        }
                        None => s.push_str(" matches=off"),
                    }
                    let _ = write!(s, " map={}", r.map_size);
                    if let Some((pts, m)) = r.prior_update {
                        let _ = write!(s, " prior_keyframe={pts} prior_matches={m}");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// Streaming navigation filter.
pub struct Pipeline<'a> {
    cfg: Config,
    policy: ExecPolicy,
    prior: Option<&'a PriorMap>,
    external_pose: Option<ExternalPose>,
    filter: Option<(NavState, ErrorCovariance)>,
    init_buffer: Vec<ImuSample>,
    last_imu: Option<ImuSample>,
    last_scan_time: Option<f64>,
    map: LocalMap,
    keyframes: KeyframeAccumulator,
    frame_id: u64,
    timing: TimingReport,
    events: Vec<Event>,
    trajectory: Vec<StampedPose>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &Config, prior: Option<&'a PriorMap>) -> Self {
        Pipeline {
            policy: ExecPolicy::from_flag(cfg.parallel),
            prior,
            external_pose: None,
            filter: None,
            init_buffer: Vec::new(),
            last_imu: None,
            last_scan_time: None,
            map: LocalMap::new(cfg.local_map),
            keyframes: KeyframeAccumulator::new(cfg.localizer),
            frame_id: 0,
            timing: TimingReport::default(),
            events: Vec::new(),
            trajectory: Vec::new(),
            cfg: cfg.clone(),
        }
    }

    /// Anchors initialization to a known position and heading.
    pub fn set_external_pose(&mut self, pose: ExternalPose) {
        self.external_pose = Some(pose);
    }

    pub fn state(&self) -> Option<&(NavState, ErrorCovariance)> {
        self.filter.as_ref()
    }

    pub fn local_map(&self) -> &LocalMap {
        &self.map
    }

    /// Propagates with the held sample up to `t`, in steps of at most
    /// [`MAX_STEP`].
    fn propagate_to(&mut self, t: f64) -> Result<()> {
        let (Some((x, p)), Some(u)) = (self.filter.as_mut(), self.last_imu) else {
            return Ok(());
        };
        while t > x.time {
            let dt = (t - x.time).min(MAX_STEP);
            let next = propagate_nominal(x, &u, dt, &self.cfg.imu.gravity)?;
            *p = propagate_covariance(p, x, &u, dt, &self.cfg.imu);
            // Land exactly on `t` despite rounding in the accumulated time.
            *x = NavState { time: if t - next.time < 1e-12 { t } else { next.time }, ..next };
        }
        Ok(())
    }

    pub fn push_imu(&mut self, u: ImuSample) -> Result<()> {
        if !u.is_valid() {
            return Err(Error::Config(format!("invalid IMU sample at t={}", u.time)));
        }
        if let Some(prev) = self.last_imu {
            if u.time < prev.time {
                return Err(Error::NonIncreasingTime { current: prev.time, next: u.time });
            }
            if u.time - prev.time > self.cfg.max_sensor_gap {
                self.events.push(Event::SensorGap { sensor: "imu", from: prev.time, to: u.time });
            }
        }
        if self.filter.is_none() {
            self.init_buffer.push(u);
            self.last_imu = Some(u);
            return Ok(());
        }
        let start = Instant::now();
        self.propagate_to(u.time)?;
        self.last_imu = Some(u);
        self.timing.record(Stage::ImuPredict, start.elapsed());
        Ok(())
    }

    fn try_initialize(&mut self, scan: &RadarScan) -> Result<bool> {
        let Some(first) = self.init_buffer.first() else {
            return Ok(false);
        };
        if scan.time < first.time + self.cfg.init_window {
            return Ok(false);
        }
        let window: Vec<ImuSample> = self
            .init_buffer
            .iter()
            .copied()
            .filter(|s| s.time <= first.time + self.cfg.init_window)
            .collect();
        let velocity = if self.cfg.init_ransac {
            ransac_ego_velocity(scan, &self.cfg.ransac).ok().map(|e| e.velocity)
        } else {
            None
        };
        let (mut x, p) = match initialize(&window, velocity, self.external_pose, &self.cfg.init) {
            Ok(v) => v,
            Err(Error::TooFewSamples { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        // Start at the newest buffered sample and hold it forward.
        let last = *self.init_buffer.last().expect("non-empty");
        x.time = last.time;
        self.events.push(Event::Initialized { time: x.time, samples: window.len(), velocity: x.velocity });
        self.filter = Some((x, p));
        self.init_buffer.clear();
        Ok(true)
    }

    pub fn push_scan(&mut self, scan: &RadarScan) -> Result<()> {
        if let Some(prev) = self.last_scan_time {
            if scan.time < prev {
                return Err(Error::NonIncreasingTime { current: prev, next: scan.time });
            }
            if scan.time - prev > self.cfg.max_sensor_gap {
                self.events.push(Event::SensorGap { sensor: "radar", from: prev, to: scan.time });
            }
        }
        self.last_scan_time = Some(scan.time);
        if self.filter.is_none() && !self.try_initialize(scan)? {
            self.events.push(Event::SkippedBeforeInit { time: scan.time });
            return Ok(());
        }
        let frame_start = Instant::now();
        let t0 = Instant::now();
        self.propagate_to(scan.time)?;
        self.timing.record(Stage::ImuPredict, t0.elapsed());
        let report = self.process_scan(scan)?;
        self.timing.record(Stage::TotalTime, frame_start.elapsed());
        self.timing.end_frame();
        let (x, _) = self.filter.as_ref().expect("initialized");
        self.trajectory.push(StampedPose { time: scan.time, position: x.position, attitude: x.attitude });
        self.events.push(Event::Scan(report));
        Ok(())
    }

    fn process_scan(&mut self, scan: &RadarScan) -> Result<ScanReport> {
        let cfg = &self.cfg;
        let mode = cfg.mode;
        let policy = self.policy;
        let (mut x, mut p) = self.filter.expect("initialized");
        let gyro = self.last_imu.map_or_else(Vector3::zeros, |u| u.gyro);
        let with_ext = cfg.update.estimate_extrinsics;
        let mut report = ScanReport { time: scan.time, ..Default::default() };

        // Doppler gating and update.
        let t = Instant::now();
        let gate = gate_doppler(scan, &x, &p, &gyro, &cfg.radar, with_ext, policy);
        report.doppler_inliers = gate.inliers.len();
        report.doppler_outliers = gate.outliers.clone();
        if mode.uses_doppler_update() {
            if let Some(up) = doppler_update(&x, &p, &gate, &cfg.update)? {
                (x, p) = (up.state, up.covariance);
                report.doppler_updated = true;
            }
        }
        self.timing.record(Stage::DopplerFusion, t.elapsed());

        // Scan matching, map maintenance and prior-map localization.
        let t = Instant::now();
        let statics: Vec<_> = gate.inliers.iter().map(|&i| scan.points[i]).collect();
        let statics = if cfg.snr_filter { snr_filter(&statics) } else { statics };
        report.match_candidates = statics.len();
        let points: Vec<MatchPoint> = statics.iter().map(|pt| MatchPoint::from_radar(pt, &cfg.radar)).collect();
        if mode.uses_scan_matching() {
            if !self.map.is_empty() {
                let out = scan_match_update(&x, &p, &points, self.map.tree(), &cfg.matching, &cfg.update, policy)?;
                report.matches = Some(out.initial_matches);
                if let Some(up) = out.update {
                    report.match_iterations = up.iterations;
                    (x, p) = (up.state, up.covariance);
                }
            }
            let positions: Vec<Vector3<f64>> = points.iter().map(|m| m.position).collect();
            self.map.augment(&positions, &x);
        }
        report.map_size = self.map.len();

        if let Some(prior) = self.prior {
            let (r, o) = x.radar_pose();
            let input = KeyframeInput { frame_id: self.frame_id, time: scan.time, points, rotation: r, translation: o };
            if let Some(kf) = self.keyframes.push(input) {
                let out = prior_map_update(&x, &p, &kf, prior, &cfg.matching, &cfg.update, policy)?;
                report.prior_update = Some((kf.points.len(), out.initial_matches));
                if let Some(up) = out.update {
                    (x, p) = (up.state, up.covariance);
                }
            }
        }
        self.timing.record(Stage::CloudMatch, t.elapsed());

        self.frame_id += 1;
        self.filter = Some((x, p));
        Ok(report)
    }

    pub fn finish(self) -> RunOutput {
        RunOutput { trajectory: self.trajectory, events: self.events, timing: self.timing, final_state: self.filter }
    }
}

/// Replays a dataset in timestamp order (IMU before radar on ties).
pub fn run(ds: &Dataset, cfg: &Config, prior: Option<&PriorMap>) -> Result<RunOutput> {
    let mut pipe = Pipeline::new(cfg, prior);
    if cfg.init_from_ground_truth {
        if let Some(g) = ds.ground_truth.first() {
            let (_, _, yaw) = g.attitude.euler();
            pipe.set_external_pose(ExternalPose { position: g.position, yaw });
        }
    }
    let (mut i, mut s) = (0, 0);
    while i < ds.imu.len() || s < ds.scans.len() {
        let take_imu = match (ds.imu.get(i), ds.scans.get(s)) {
            (Some(u), Some(scan)) => u.time <= scan.time,
            (Some(_), None) => true,
            _ => false,
        };
        if take_imu {
            pipe.push_imu(ds.imu[i])?;
            i += 1;
        } else {
            pipe.push_scan(&ds.scans[s])?;
            s += 1;
        }
    }
    Ok(pipe.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ape_rmse, Alignment};
    use crate::sim::{simulate, Scenario, Shape};

    fn small(shape: Shape, duration: f64) -> Scenario {
        Scenario { shape, world_extent: 150.0, buildings: 20, duration, ..Default::default() }
    }

    #[test]
    fn noiseless_hover_stays_put() {
        let s = Scenario { noiseless: true, gyro_bias: Vector3::zeros(), accel_bias: Vector3::zeros(), ..small(Shape::Hover, 8.0) };
        let sim = simulate(&s).unwrap();
        let p0 = sim.flight.sample(0.0).position;
        // Doppler is exact at the truth; p2d against sampled surfaces is not.
        for (mode, tol) in [(Mode::DopplerOnly, 1e-6), (Mode::Full, 0.1)] {
            let mut cfg = Config { mode, ..s.run_config() };
            cfg.finish().unwrap();
            let out = run(&sim.dataset, &cfg, None).unwrap();
            assert!(out.trajectory.len() > 100);
            for pose in &out.trajectory {
                assert!((pose.position - p0).norm() < tol, "{mode}: {:?}", pose.position - p0);
            }
        }
    }

    #[test]
    fn noisy_short_flight_tracks_truth() {
        let s = small(Shape::FigureEight, 25.0);
        let sim = simulate(&s).unwrap();
        let out = run(&sim.dataset, &s.run_config(), None).unwrap();
        let ape = ape_rmse(&out.trajectory, &sim.dataset.ground_truth, Alignment::First).unwrap();
        assert!(ape.translation_rmse < 1.0, "APE {}", ape.translation_rmse);
        assert!(out.timing.frames() > 0);
    }

    #[test]
    fn modes_are_tagged_and_doppler_only_skips_matching() {
        let s = small(Shape::FigureEight, 6.0);
        let sim = simulate(&s).unwrap();
        for mode in Mode::ALL {
            let mut cfg = Config { mode, ..s.run_config() };
            cfg.finish().unwrap();
            let out = run(&sim.dataset, &cfg, None).unwrap();
            let log = out.event_log(mode);
            assert!(log.starts_with(&format!("run mode={mode}\n")));
            let matched = out.scan_reports().any(|r| r.matches.is_some());
            assert_eq!(matched, mode != Mode::DopplerOnly);
            let doppler = out.scan_reports().any(|r| r.doppler_updated);
            assert_eq!(doppler, mode.uses_doppler_update());
        }
    }

    #[test]
    fn replay_is_deterministic_across_policies() {
        let s = small(Shape::FigureEight, 8.0);
        let sim = simulate(&s).unwrap();
        let a = run(&sim.dataset, &s.run_config(), None).unwrap();
        let b = run(&sim.dataset, &Config { parallel: false, ..s.run_config() }, None).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.event_log(Mode::Full), b.event_log(Mode::Full));
    }

    #[test]
    fn sensor_gaps_warn_and_continue() {
        let s = small(Shape::Hover, 6.0);
        let mut sim = simulate(&s).unwrap();
        sim.dataset.scans.retain(|s| !(3.0..4.5).contains(&s.time));
        let out = run(&sim.dataset, &s.run_config(), None).unwrap();
        assert!(out.events.iter().any(|e| matches!(e, Event::SensorGap { sensor: "radar", .. })));
        assert!(out.trajectory.last().unwrap().time > 5.0);
    }
}
