//! Deterministic synthetic flights: analytic trajectories, IMU and radar
//! streams with labeled outliers, and the world point set they observe.
//!
//! IMU samples are the exact inverse of the discrete strapdown step: the gyro
//! reading over `[t_k, t_k+1)` is `Log(R_kᵀ R_k+1) / dt` and the specific force
//! is `R_kᵀ ((v_k+1 - v_k) / dt - g)`, so dead reckoning on a noiseless stream
//! reproduces the sampled attitude and velocity up to rounding.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::io::BufRead;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::{self, key_table, Config, Value};
use crate::dataset::{self, Dataset, StampedPose};
use crate::error::{Error, Result};
use crate::ins::{ImuNoiseParams, ImuSample};
use crate::manifold::{log_so3, Rotation};
use crate::radar::{RadarNoiseParams, RadarPoint, RadarScan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    /// Ground plane plus box buildings.
    Structured,
    /// Ground plane only.
    Degraded,
}

impl Value for WorldKind {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "structured" => Some(WorldKind::Structured),
            "degraded" => Some(WorldKind::Degraded),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            WorldKind::Structured => "structured",
            WorldKind::Degraded => "degraded",
        }
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Hover,
    /// Circle of radius `size` starting at the origin heading +x.
    Circle,
    /// Lemniscate of Gerono with half-width `size`.
    FigureEight,
}

impl Value for Shape {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "hover" => Some(Shape::Hover),
            "circle" => Some(Shape::Circle),
            "figure-eight" => Some(Shape::FigureEight),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Shape::Hover => "hover",
            Shape::Circle => "circle",
            Shape::FigureEight => "figure-eight",
        }
        .to_string()
    }
}

/// Everything that determines a simulated flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub world: WorldKind,
    /// The world spans `[-extent, extent]²` around the origin, m.
    pub world_extent: f64,
    pub buildings: usize,
    /// Surface sampling density, points/m².
    pub point_density: f64,
    pub shape: Shape,
    /// Circle radius or figure-eight half-width, m.
    pub size: f64,
    pub altitude: f64,
    /// Figure-eight altitude oscillation amplitude, m.
    pub altitude_amplitude: f64,
    /// Cruise speed along the path, m/s.
    pub speed: f64,
    /// Speed ramp-up time, s.
    pub ramp: f64,
    /// Initial hover before the ramp, s.
    pub static_duration: f64,
    /// Total length of the log, s.
    pub duration: f64,
    pub yaw_amplitude: f64,
    pub imu_rate: f64,
    pub radar_rate: f64,
    pub gt_rate: f64,
    /// Disables sensor noise, bias random walk and outlier injection.
    pub noiseless: bool,
    pub imu: ImuNoiseParams,
    pub radar: RadarNoiseParams,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    /// Fraction of detections on moving objects.
    pub dynamic_rate: f64,
    /// Doppler offset of moving objects in units of `sigma_doppler`.
    pub dynamic_offset: f64,
    /// Fraction of spurious detections.
    pub clutter_rate: f64,
    pub snr_mean: f64,
    pub snr_sigma: f64,
    /// Fraction of static detections drawn from the low-SNR tail.
    pub snr_tail_rate: f64,
    pub fov_half_angle: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub points_min: usize,
    pub points_max: usize,
    pub ext_rotation: Rotation,
    pub ext_translation: Vector3<f64>,
    /// Trajectories whose acceleration exceeds this are rejected, m/s².
    pub max_accel: f64,
    /// Trajectories whose body rate exceeds this are rejected, rad/s.
    pub max_rate: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            world: WorldKind::Structured,
            world_extent: 250.0,
            buildings: 60,
            point_density: 1.0,
            shape: Shape::FigureEight,
            size: 100.0,
            altitude: 60.0,
            altitude_amplitude: 20.0,
            speed: 10.0,
            ramp: 5.0,
            static_duration: 2.0,
            duration: 60.0,
            yaw_amplitude: 0.3,
            imu_rate: 250.0,
            radar_rate: 20.0,
            gt_rate: 100.0,
            noiseless: false,
            imu: ImuNoiseParams::default(),
            radar: RadarNoiseParams::default(),
            gyro_bias: Vector3::new(2e-3, -1.5e-3, 1e-3),
            accel_bias: Vector3::new(0.03, -0.02, 0.04),
            dynamic_rate: 0.05,
            dynamic_offset: 10.0,
            clutter_rate: 0.02,
            snr_mean: 15.0,
            snr_sigma: 2.0,
            snr_tail_rate: 0.05,
            fov_half_angle: 50f64.to_radians(),
            min_range: 1.0,
            max_range: 150.0,
            points_min: 200,
            points_max: 300,
            ext_rotation: Rotation::from_euler(0.0, FRAC_PI_2, 0.0),
            ext_translation: Vector3::new(0.1, 0.0, -0.05),
            max_accel: 20.0,
            max_rate: 3.0,
        }
    }
}

key_table!(Scenario {
    "seed" => seed,
    "world" => world,
    "world_extent" => world_extent,
    "buildings" => buildings,
    "point_density" => point_density,
    "shape" => shape,
    "size" => size,
    "altitude" => altitude,
    "altitude_amplitude" => altitude_amplitude,
    "speed" => speed,
    "ramp" => ramp,
    "static_duration" => static_duration,
    "duration" => duration,
    "yaw_amplitude" => yaw_amplitude,
    "imu_rate" => imu_rate,
    "radar_rate" => radar_rate,
    "gt_rate" => gt_rate,
    "noiseless" => noiseless,
    "gyro_noise" => imu.gyro_noise,
    "accel_noise" => imu.accel_noise,
    "gyro_bias_walk" => imu.gyro_bias_walk,
    "accel_bias_walk" => imu.accel_bias_walk,
    "gravity" => imu.gravity,
    "sigma_range" => radar.sigma_range,
    "sigma_azimuth" => radar.sigma_azimuth,
    "sigma_elevation" => radar.sigma_elevation,
    "sigma_doppler" => radar.sigma_doppler,
    "gyro_bias" => gyro_bias,
    "accel_bias" => accel_bias,
    "dynamic_rate" => dynamic_rate,
    "dynamic_offset" => dynamic_offset,
    "clutter_rate" => clutter_rate,
    "snr_mean" => snr_mean,
    "snr_sigma" => snr_sigma,
    "snr_tail_rate" => snr_tail_rate,
    "fov_half_angle" => fov_half_angle,
    "min_range" => min_range,
    "max_range" => max_range,
    "points_min" => points_min,
    "points_max" => points_max,
    "ext_rotation" => ext_rotation,
    "ext_translation" => ext_translation,
    "max_accel" => max_accel,
    "max_rate" => max_rate,
});

impl Scenario {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut s = Scenario::default();
        for e in config::parse_entries(reader)? {
            s.apply(&e)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::parse(dataset::open(path)?)
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Run configuration whose sensor model and extrinsics match this scenario.
    pub fn run_config(&self) -> Config {
        let mut cfg = Config { gravity: self.imu.gravity.norm(), imu: self.imu, radar: self.radar, ..Config::default() };
        cfg.init.ext_rotation = self.ext_rotation;
        cfg.init.ext_translation = self.ext_translation;
        cfg.finish().expect("scenario parameters are validated");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("world_extent", self.world_extent),
            ("point_density", self.point_density),
            ("duration", self.duration),
            ("ramp", self.ramp),
            ("imu_rate", self.imu_rate),
            ("radar_rate", self.radar_rate),
            ("gt_rate", self.gt_rate),
            ("fov_half_angle", self.fov_half_angle),
            ("max_range", self.max_range),
            ("max_accel", self.max_accel),
            ("max_rate", self.max_rate),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.shape != Shape::Hover && !(self.size > 0.0 && self.speed > 0.0) {
            return Err(Error::Config("size and speed must be positive for moving shapes".into()));
        }
        if self.static_duration < 0.0 || self.min_range < 0.0 || self.min_range >= self.max_range {
            return Err(Error::Config("invalid static_duration or range limits".into()));
        }
        if self.points_min == 0 || self.points_min > self.points_max {
            return Err(Error::Config("points_min must be in 1..=points_max".into()));
        }
        for (k, v) in [("dynamic_rate", self.dynamic_rate), ("clutter_rate", self.clutter_rate), ("snr_tail_rate", self.snr_tail_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1]")));
            }
        }
        if self.dynamic_rate + self.clutter_rate > 1.0 {
            return Err(Error::Config("dynamic_rate + clutter_rate exceeds 1".into()));
        }
        self.imu.validate()?;
        self.radar.validate()
    }
}

/// Ground-truth kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub attitude: Rotation,
}

impl TruthSample {
    pub fn pose(&self) -> StampedPose {
        StampedPose { time: self.time, position: self.position, attitude: self.attitude }
    }
}

/// Quintic smoothstep and its antiderivative and derivative.
fn smoothstep(x: f64) -> (f64, f64, f64) {
    let x = x.clamp(0.0, 1.0);
    let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
    let integral = x.powi(4) * (2.5 - 3.0 * x + x * x);
    let ds = 30.0 * x * x * (1.0 - x) * (1.0 - x);
    (s, integral, ds)
}

/// Analytic, C²-smooth flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Flight {
    shape: Shape,
    size: f64,
    altitude: f64,
    altitude_amplitude: f64,
    yaw_amplitude: f64,
    static_duration: f64,
    ramp: f64,
    /// Cruise phase rate, rad/s.
    phase_rate: f64,
    gravity: Vector3<f64>,
}

impl Flight {
    fn from_scenario(s: &Scenario) -> Self {
        let mut f = Flight {
            shape: s.shape,
            size: s.size,
            altitude: s.altitude,
            altitude_amplitude: s.altitude_amplitude,
            yaw_amplitude: s.yaw_amplitude,
            static_duration: s.static_duration,
            ramp: s.ramp,
            phase_rate: 0.0,
            gravity: s.imu.gravity,
        };
        if s.shape != Shape::Hover {
            // Mean |dp/du| over one period, midpoint rule.
            let n = 20_000;
            let mean = (0..n)
                .map(|i| f.curve((i as f64 + 0.5) / n as f64 * std::f64::consts::TAU).1.norm())
                .sum::<f64>()
                / n as f64;
            f.phase_rate = s.speed / mean;
        }
        f
    }

    /// Position and its first three derivatives with respect to the phase.
    fn curve(&self, u: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (a, h, h1) = (self.size, self.altitude, self.altitude_amplitude);
        let (su, cu) = u.sin_cos();
        match self.shape {
            Shape::Hover => (Vector3::new(0.0, 0.0, h), Vector3::zeros(), Vector3::zeros()),
            Shape::Circle => (
                Vector3::new(a * su, a * (1.0 - cu), h),
                Vector3::new(a * cu, a * su, 0.0),
                Vector3::new(-a * su, a * cu, 0.0),
            ),
            Shape::FigureEight => {
                let (s2, c2) = (2.0 * u).sin_cos();
                (
                    Vector3::new(a * su, 0.5 * a * s2, h + h1 * su),
                    Vector3::new(a * cu, a * c2, h1 * cu),
                    Vector3::new(-a * su, -2.0 * a * s2, -h1 * su),
                )
            }
        }
    }

    /// Phase and its first two time derivatives.
    fn phase(&self, t: f64) -> (f64, f64, f64) {
        let tau = t - self.static_duration;
        if tau <= 0.0 || self.phase_rate == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let w = self.phase_rate;
        if tau < self.ramp {
            let (s, integral, ds) = smoothstep(tau / self.ramp);
            (w * self.ramp * integral, w * s, w * ds / self.ramp)
        } else {
            (w * (0.5 * self.ramp + tau - self.ramp), w, 0.0)
        }
    }

    pub fn sample(&self, t: f64) -> TruthSample {
        let (u, du, ddu) = self.phase(t);
        let (p, dp, ddp) = self.curve(u);
        let velocity = dp * du;
        let acceleration = ddp * du * du + dp * ddu;
        TruthSample { time: t, position: p, velocity, acceleration, attitude: self.attitude(&acceleration, u) }
    }

    /// Body z along thrust, yaw oscillating with the phase.
    fn attitude(&self, acceleration: &Vector3<f64>, u: f64) -> Rotation {
        let z = (acceleration - self.gravity).normalize();
        let yaw = self.yaw_amplitude * u.sin();
        let xc = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let y = z.cross(&xc).normalize();
        let x = y.cross(&z);
        Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
    }
}

/// Builds the flight and checks it against the dynamics bounds at the IMU rate.
pub fn generate_trajectory(s: &Scenario) -> Result<Flight> {
    s.validate()?;
    let f = Flight::from_scenario(s);
    let dt = 1.0 / s.imu_rate;
    let n = (s.duration * s.imu_rate).ceil() as usize;
    let mut prev = f.sample(0.0);
    for k in 1..=n {
        let cur = f.sample(k as f64 * dt);
        if cur.acceleration.norm() > s.max_accel {
            return Err(Error::Trajectory(format!("acceleration {:.2} m/s² at t={:.3} exceeds max_accel", cur.acceleration.norm(), cur.time)));
        }
        let rate = log_so3(&(prev.attitude.inverse() * cur.attitude)).norm() / dt;
        if rate > s.max_rate {
            return Err(Error::Trajectory(format!("body rate {rate:.2} rad/s at t={:.3} exceeds max_rate", cur.time)));
        }
        prev = cur;
    }
    Ok(f)
}

fn sample_times(rate: f64, duration: f64) -> impl Iterator<Item = f64> {
    (0..).map(move |k| k as f64 / rate).take_while(move |t| *t < duration)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

/// IMU stream for the flight, starting from the scenario's true biases.
pub fn synthesize_imu(f: &Flight, s: &Scenario) -> Vec<ImuSample> {
    let mut rng = rng_for(s.seed, 1);
    let dt = 1.0 / s.imu_rate;
    let sq = dt.sqrt();
    let (mut bg, mut ba) = (s.gyro_bias, s.accel_bias);
    let times: Vec<f64> = sample_times(s.imu_rate, s.duration).collect();
    let mut out = Vec::with_capacity(times.len());
    for &t in &times {
        let a = f.sample(t);
        let b = f.sample(t + dt);
        let omega = log_so3(&(a.attitude.inverse() * b.attitude)) / dt;
        let force = a.attitude.inverse() * ((b.velocity - a.velocity) / dt - s.imu.gravity);
        let (mut gyro, mut accel) = (omega + bg, force + ba);
        if !s.noiseless {
            gyro += gaussian3(&mut rng) * (s.imu.gyro_noise / sq);
            accel += gaussian3(&mut rng) * (s.imu.accel_noise / sq);
            bg += gaussian3(&mut rng) * (s.imu.gyro_bias_walk * sq);
            ba += gaussian3(&mut rng) * (s.imu.accel_bias_walk * sq);
        }
        out.push(ImuSample::new(t, accel, gyro));
    }
    out
}

/// Ground-plane and building surface points.
pub fn generate_world(s: &Scenario) -> Vec<Vector3<f64>> {
    let mut rng = rng_for(s.seed, 0);
    let spacing = 1.0 / s.point_density.sqrt();
    let mut pts = Vec::new();
    let face = |rng: &mut ChaCha8Rng, pts: &mut Vec<Vector3<f64>>, o: Vector3<f64>, e1: Vector3<f64>, e2: Vector3<f64>| {
        let n1 = (e1.norm() / spacing).ceil().max(1.0) as usize;
        let n2 = (e2.norm() / spacing).ceil().max(1.0) as usize;
        for i in 0..n1 {
            for j in 0..n2 {
                let a = (i as f64 + rng.random::<f64>()) / n1 as f64;
                let b = (j as f64 + rng.random::<f64>()) / n2 as f64;
                pts.push(o + e1 * a + e2 * b);
            }
        }
    };

    // Buildings: yawed boxes (center, half sizes, yaw).
    let mut boxes = Vec::new();
    if s.world == WorldKind::Structured {
        let margin = 20.0f64.min(0.5 * s.world_extent);
        for _ in 0..s.buildings {
            let c = Vector3::new(
                rng.random_range(-s.world_extent + margin..s.world_extent - margin),
                rng.random_range(-s.world_extent + margin..s.world_extent - margin),
                0.0,
            );
            let half = Vector3::new(rng.random_range(4.0..15.0), rng.random_range(4.0..15.0), 0.0);
            let height = rng.random_range(8.0..30.0);
            let yaw = rng.random_range(0.0..std::f64::consts::PI);
            boxes.push((c, half, height, yaw));
        }
    }
    let inside = |p: &Vector3<f64>| {
        boxes.iter().any(|(c, half, _, yaw)| {
            let d = p - c;
            let (sy, cy) = f64::sin_cos(*yaw);
            let (lx, ly) = (cy * d.x + sy * d.y, -sy * d.x + cy * d.y);
            lx.abs() < half.x && ly.abs() < half.y
        })
    };

    let e = s.world_extent;
    let mut ground = Vec::new();
    face(&mut rng, &mut ground, Vector3::new(-e, -e, 0.0), Vector3::new(2.0 * e, 0.0, 0.0), Vector3::new(0.0, 2.0 * e, 0.0));
    pts.extend(ground.into_iter().filter(|p| !inside(p)));

    for (c, half, height, yaw) in &boxes {
        let (sy, cy) = yaw.sin_cos();
        let ax = Vector3::new(cy, sy, 0.0) * half.x;
        let ay = Vector3::new(-sy, cy, 0.0) * half.y;
        let up = Vector3::new(0.0, 0.0, *height);
        let corner = c - ax - ay;
        face(&mut rng, &mut pts, corner + up, ax * 2.0, ay * 2.0);
        face(&mut rng, &mut pts, corner, ax * 2.0, up);
        face(&mut rng, &mut pts, corner, ay * 2.0, up);
        face(&mut rng, &mut pts, c + ax + ay, -ax * 2.0, up);
        face(&mut rng, &mut pts, c + ax + ay, -ay * 2.0, up);
    }
    pts
}

/// Uniform horizontal grid over world points for footprint queries.
struct WorldIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl<'a> WorldIndex<'a> {
    fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        WorldIndex { points, cell, cells }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Indices of points within horizontal distance `r` of `c`, in
    /// increasing index order.
    fn near(&self, c: &Vector3<f64>, r: f64) -> Vec<u32> {
        let lo = Self::key(&(c - Vector3::new(r, r, 0.0)), self.cell);
        let hi = Self::key(&(c + Vector3::new(r, r, 0.0)), self.cell);
        let mut out = Vec::new();
        for i in lo.0..=hi.0 {
            for j in lo.1..=hi.1 {
                if let Some(v) = self.cells.get(&(i, j)) {
                    out.extend(v.iter().filter(|&&k| {
                        let d = self.points[k as usize] - c;
                        d.x * d.x + d.y * d.y <= r * r
                    }));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Ground-truth class of a synthesized detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Static,
    /// On a moving object: geometry and Doppler inconsistent with the world.
    Dynamic,
    /// Spurious return.
    Clutter,
}

/// Radar pose (world from radar) and radar-frame ego-velocity at `t`,
/// using the IMU-interval body rate as the filter does.
fn radar_kinematics(f: &Flight, s: &Scenario, t: f64) -> (Rotation, Vector3<f64>, Vector3<f64>) {
    let truth = f.sample(t);
    let dt = 1.0 / s.imu_rate;
    let t0 = (t * s.imu_rate + 1e-9).floor() / s.imu_rate;
    let a = f.sample(t0);
    let b = f.sample(t0 + dt);
    let omega = log_so3(&(a.attitude.inverse() * b.attitude)) / dt;
    let r = truth.attitude * s.ext_rotation;
    let p = truth.position + truth.attitude * s.ext_translation;
    let v_body = truth.attitude.inverse() * truth.velocity + omega.cross(&s.ext_translation);
    (r, p, s.ext_rotation.inverse() * v_body)
}

/// Radar scans with per-detection labels.
pub fn synthesize_radar(f: &Flight, world: &[Vector3<f64>], s: &Scenario) -> (Vec<RadarScan>, Vec<Vec<PointLabel>>) {
    let mut rng = rng_for(s.seed, 2);
    let index = WorldIndex::new(world, 10.0);
    let cos_fov = s.fov_half_angle.cos();
    let noise = |rng: &mut ChaCha8Rng, sigma: f64| if s.noiseless { 0.0 } else { Normal::new(0.0, sigma).unwrap().sample(rng) };
    let measure = |rng: &mut ChaCha8Rng, p: &Vector3<f64>, doppler: f64, snr: f64| {
        let exact = RadarPoint::from_cartesian(p, doppler, snr);
        RadarPoint::new(
            exact.range + noise(rng, s.radar.sigma_range),
            exact.azimuth + noise(rng, s.radar.sigma_azimuth),
            exact.elevation + noise(rng, s.radar.sigma_elevation),
            doppler + noise(rng, s.radar.sigma_doppler),
            snr,
        )
    };

    let mut scans = Vec::new();
    let mut labels = Vec::new();
    for t in sample_times(s.radar_rate, s.duration) {
        let (r, origin, v_radar) = radar_kinematics(f, s, t);
        let r_inv = r.inverse();
        let visible: Vec<Vector3<f64>> = index
            .near(&origin, s.max_range)
            .into_iter()
            .filter_map(|k| {
                let q = r_inv * (world[k as usize] - origin);
                let n = q.norm();
                (n >= s.min_range.max(1e-6) && n <= s.max_range && q.x >= n * cos_fov).then_some(q)
            })
            .collect();

        let total = rng.random_range(s.points_min..=s.points_max);
        let (n_dyn, n_clutter) = if s.noiseless {
            (0, 0)
        } else {
            ((total as f64 * s.dynamic_rate).round() as usize, (total as f64 * s.clutter_rate).round() as usize)
        };
        let n_static = (total - n_dyn - n_clutter).min(visible.len());
        let mut points = Vec::with_capacity(total);
        let mut lab = Vec::with_capacity(total);
        let snr = |rng: &mut ChaCha8Rng, offset: f64| s.snr_mean + offset + s.snr_sigma * rng.sample::<f64, _>(StandardNormal);

        let mut chosen = index::sample(&mut rng, visible.len(), n_static).into_vec();
        chosen.sort_unstable();
        for k in chosen {
            let q = visible[k];
            let tail = rng.random::<f64>() < s.snr_tail_rate;
            let snr = snr(&mut rng, if tail { -10.0 } else { 0.0 });
            let doppler = q.normalize().dot(&v_radar);
            points.push(measure(&mut rng, &q, doppler, snr));
            lab.push(PointLabel::Static);
        }
        if !visible.is_empty() {
            for _ in 0..n_dyn {
                let q = visible[rng.random_range(0..visible.len())] + Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let doppler = q.normalize().dot(&v_radar) + sign * s.dynamic_offset * s.radar.sigma_doppler;
                let snr = snr(&mut rng, 0.0);
                points.push(measure(&mut rng, &q, doppler, snr));
                lab.push(PointLabel::Dynamic);
            }
        }
        for _ in 0..n_clutter {
            let cos_t = rng.random_range(cos_fov..=1.0);
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let range = rng.random_range(s.min_range.max(1.0)..s.max_range);
            let q = Vector3::new(cos_t, sin_t * phi.cos(), sin_t * phi.sin()) * range;
            let spread = v_radar.norm() + 5.0;
            let doppler = rng.random_range(-spread..spread);
            let snr = snr(&mut rng, -8.0);
            points.push(RadarPoint::from_cartesian(&q, doppler, snr));
            lab.push(PointLabel::Clutter);
        }
        scans.push(RadarScan { time: t, points });
        labels.push(lab);
    }
    (scans, labels)
}

/// A complete simulated log with its hidden ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub flight: Flight,
    pub dataset: Dataset,
    pub labels: Vec<Vec<PointLabel>>,
    pub world: Vec<Vector3<f64>>,
}

impl Simulation {
    /// Ground-truth poses at the given times.
    pub fn truth_at(&self, times: impl IntoIterator<Item = f64>) -> Vec<StampedPose> {
        times.into_iter().map(|t| self.flight.sample(t).pose()).collect()
    }
}

pub fn simulate(s: &Scenario) -> Result<Simulation> {
    let flight = generate_trajectory(s)?;
    let world = generate_world(s);
    let imu = synthesize_imu(&flight, s);
    let (scans, labels) = synthesize_radar(&flight, &world, s);
    let ground_truth = sample_times(s.gt_rate, s.duration).map(|t| flight.sample(t).pose()).collect();
    Ok(Simulation { flight, dataset: Dataset { imu, scans, ground_truth }, labels, world })
}

/// Total length of a polyline through the poses' positions.
pub fn path_length(poses: &[StampedPose]) -> f64 {
    poses.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
}
