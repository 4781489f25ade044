//! Line-based `key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known; an
//! unknown key, a repeated key or an unparsable value fails with the line
//! number. Vectors are written as space-separated components, rotations as
//! `roll pitch yaw` in radians and optional values as `none` or a number.

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::dataset;
use crate::error::{Error, Result};
use crate::ins::{ImuNoiseParams, InitConfig};
use crate::localizer::LocalizerConfig;
use crate::manifold::Rotation;
use crate::matcher::{Association, LocalMapConfig, MatchConfig};
use crate::radar::{RadarNoiseParams, RansacConfig};
use crate::update::UpdateConfig;

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits a config stream into entries, rejecting malformed lines and
/// duplicate keys.
pub fn parse_entries<R: BufRead>(reader: R) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::Parse { line: n, msg: e.to_string() })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: n, msg: format!("expected `key = value`, found {body:?}") })?;
        let (key, value) = (k.trim(), v.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse { line: n, msg: format!("expected `key = value`, found {body:?}") });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Parse { line: n, msg: format!("key {key:?} already set on line {}", prev.line) });
        }
        out.push(Entry { line: n, key: key.to_string(), value: value.to_string() });
    }
    Ok(out)
}

/// A configuration value that can be parsed from and rendered to text.
pub trait Value: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

impl Value for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl Value for usize {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl Value for u64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl Value for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "on" | "yes" | "1" => Some(true),
            "false" | "off" | "no" | "0" => Some(false),
            _ => None,
        }
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl Value for Vector3<f64> {
    fn parse_value(s: &str) -> Option<Self> {
        let v: Vec<f64> = s.split_whitespace().map(f64::parse_value).collect::<Option<_>>()?;
        (v.len() == 3).then(|| Vector3::new(v[0], v[1], v[2]))
    }
    fn render(&self) -> String {
        format!("{} {} {}", self.x, self.y, self.z)
    }
}

impl Value for Rotation {
    fn parse_value(s: &str) -> Option<Self> {
        Vector3::parse_value(s).map(|v| Rotation::from_euler(v.x, v.y, v.z))
    }
    fn render(&self) -> String {
        let (r, p, y) = self.euler();
        Vector3::new(r, p, y).render()
    }
}

impl Value for Option<f64> {
    fn parse_value(s: &str) -> Option<Self> {
        if s == "none" {
            Some(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".to_string(), |v| v.render())
    }
}

/// Applies one entry to a field, mapping parse failures to a line error.
pub fn assign<T: Value>(field: &mut T, e: &Entry) -> Result<()> {
    *field = T::parse_value(&e.value)
        .ok_or_else(|| Error::Parse { line: e.line, msg: format!("invalid value {:?} for {:?}", e.value, e.key) })?;
    Ok(())
}

pub fn unknown_key(e: &Entry) -> Error {
    Error::Parse { line: e.line, msg: format!("unknown key {:?}", e.key) }
}

/// Generates `apply` (entry → field) and `entries` (rendered defaults) from
/// one key table.
macro_rules! key_table {
    ($ty:ty { $($key:literal => $($field:ident).+),* $(,)? }) => {
        impl $ty {
            /// Sets the field named by `e.key`; unknown keys are errors.
            pub fn apply(&mut self, e: &$crate::config::Entry) -> $crate::error::Result<()> {
                match e.key.as_str() {
                    $($key => $crate::config::assign(&mut self.$($field).+, e),)*
                    _ => Err($crate::config::unknown_key(e)),
                }
            }

            /// Every key with its current value, in table order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                use $crate::config::Value;
                vec![$(($key, self.$($field).+.render())),*]
            }
        }
    };
}
pub(crate) use key_table;

/// Processing mode; all but `Full` are ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Full,
    /// Doppler updates only; no scan matching.
    DopplerOnly,
    /// Point-to-distribution scan matching only; Doppler still gates.
    P2dOnly,
    /// Nearest-point scan matching only; Doppler still gates.
    P2pOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::DopplerOnly, Mode::P2dOnly, Mode::P2pOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::DopplerOnly => "doppler-only",
            Mode::P2dOnly => "p2d-only",
            Mode::P2pOnly => "p2p-only",
        }
    }

    pub fn uses_doppler_update(self) -> bool {
        matches!(self, Mode::Full | Mode::DopplerOnly)
    }

    pub fn uses_scan_matching(self) -> bool {
        self != Mode::DopplerOnly
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (expected full, doppler-only, p2d-only or p2p-only)")))
    }
}

impl Value for Mode {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

/// Everything the pipeline needs besides its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub mode: Mode,
    /// Run per-point work on the rayon pool.
    pub parallel: bool,
    /// Gravity magnitude, m/s²; gravity points along world -z.
    pub gravity: f64,
    pub imu: ImuNoiseParams,
    pub radar: RadarNoiseParams,
    pub init: InitConfig,
    /// Length of the static IMU window used for initialization, s.
    pub init_window: f64,
    /// Anchor the initial position and yaw to the first ground-truth record.
    pub init_from_ground_truth: bool,
    /// Initialize velocity from RANSAC on the first scan.
    pub init_ransac: bool,
    pub ransac: RansacConfig,
    pub update: UpdateConfig,
    pub matching: MatchConfig,
    /// Drop the lowest-SNR detections before scan matching.
    pub snr_filter: bool,
    pub local_map: LocalMapConfig,
    pub localizer: LocalizerConfig,
    /// Sensor silence longer than this produces a warning event, s.
    pub max_sensor_gap: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mode: Mode::Full,
            parallel: true,
            gravity: 9.81,
            imu: ImuNoiseParams::default(),
            radar: RadarNoiseParams::default(),
            init: InitConfig::default(),
            init_window: 1.0,
            init_from_ground_truth: true,
            init_ransac: true,
            ransac: RansacConfig::default(),
            update: UpdateConfig::default(),
            matching: MatchConfig::default(),
            snr_filter: true,
            local_map: LocalMapConfig::default(),
            localizer: LocalizerConfig::default(),
            max_sensor_gap: 1.0,
        }
    }
}

/// Angles in the file are degrees; these mirror the radians stored in
/// [`RadarNoiseParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
struct Degrees {
    azimuth: f64,
    elevation: f64,
}

key_table!(Config {
    "mode" => mode,
    "parallel" => parallel,
    "gravity" => gravity,
    "gyro_noise" => imu.gyro_noise,
    "accel_noise" => imu.accel_noise,
    "gyro_bias_walk" => imu.gyro_bias_walk,
    "accel_bias_walk" => imu.accel_bias_walk,
    "sigma_range" => radar.sigma_range,
    "sigma_doppler" => radar.sigma_doppler,
    "init_window" => init_window,
    "init_min_samples" => init.min_static_samples,
    "init_gravity_tolerance" => init.gravity_tolerance,
    "init_from_ground_truth" => init_from_ground_truth,
    "init_ransac" => init_ransac,
    "init_sigma_tilt" => init.sigma_tilt,
    "init_sigma_yaw" => init.sigma_yaw,
    "init_sigma_position" => init.sigma_position,
    "init_sigma_velocity" => init.sigma_velocity,
    "init_sigma_gyro_bias" => init.sigma_gyro_bias,
    "init_sigma_accel_bias" => init.sigma_accel_bias,
    "init_sigma_ext_rotation" => init.sigma_ext_rotation,
    "init_sigma_ext_translation" => init.sigma_ext_translation,
    "ext_rotation" => init.ext_rotation,
    "ext_translation" => init.ext_translation,
    "ransac_threshold" => ransac.threshold,
    "ransac_min_iterations" => ransac.min_iterations,
    "ransac_max_iterations" => ransac.max_iterations,
    "ransac_confidence" => ransac.confidence,
    "ransac_seed" => ransac.seed,
    "max_iterations" => update.max_iterations,
    "convergence_tolerance" => update.tolerance,
    "exact_prior_jacobian" => update.exact_prior_jacobian,
    "joseph_form" => update.joseph,
    "estimate_extrinsics" => update.estimate_extrinsics,
    "snr_filter" => snr_filter,
    "neighbors" => matching.neighbors,
    "association_radius" => matching.association_radius,
    "covariance_inflation" => matching.inflation,
    "covariance_regularization" => matching.regularization,
    "min_matches" => matching.min_matches,
    "chi2_threshold" => matching.chi2_threshold,
    "map_radius" => local_map.radius,
    "map_margin" => local_map.margin,
    "map_dedup_voxel" => local_map.dedup_voxel,
    "keyframe_frames" => localizer.frames_per_keyframe,
    "keyframe_voxel_size" => localizer.voxel_size,
    "keyframe_dist_threshold" => localizer.dist_threshold,
    "keyframe_occupancy_shortcut" => localizer.occupancy_shortcut,
    "max_sensor_gap" => max_sensor_gap,
});

impl Config {
    /// Parses a config stream on top of the defaults.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut cfg = Config::default();
        let mut deg = Degrees {
            azimuth: cfg.radar.sigma_azimuth.to_degrees(),
            elevation: cfg.radar.sigma_elevation.to_degrees(),
        };
        for e in parse_entries(reader)? {
            match e.key.as_str() {
                "sigma_azimuth_deg" => assign(&mut deg.azimuth, &e)?,
                "sigma_elevation_deg" => assign(&mut deg.elevation, &e)?,
                _ => cfg.apply(&e)?,
            }
        }
        cfg.radar.sigma_azimuth = deg.azimuth.to_radians();
        cfg.radar.sigma_elevation = deg.elevation.to_radians();
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::parse(dataset::open(path)?)
    }

    /// Propagates derived settings and validates ranges.
    pub fn finish(&mut self) -> Result<()> {
        if !(self.gravity > 0.0) {
            return Err(Error::Config("gravity must be positive".into()));
        }
        let g = Vector3::new(0.0, 0.0, -self.gravity);
        self.imu.gravity = g;
        self.init.gravity = g;
        self.imu.validate()?;
        self.radar.validate()?;
        self.matching.association = if self.mode == Mode::P2pOnly { Association::Point } else { Association::Distribution };
        let positive = [
            ("init_window", self.init_window),
            ("association_radius", self.matching.association_radius),
            ("covariance_inflation", self.matching.inflation),
            ("covariance_regularization", self.matching.regularization),
            ("chi2_threshold", self.matching.chi2_threshold),
            ("map_radius", self.local_map.radius),
            ("keyframe_voxel_size", self.localizer.voxel_size),
            ("keyframe_dist_threshold", self.localizer.dist_threshold),
            ("convergence_tolerance", self.update.tolerance),
            ("ransac_threshold", self.ransac.threshold),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.local_map.margin < 0.0 || self.local_map.dedup_voxel.is_some_and(|v| v <= 0.0) {
            return Err(Error::Config("map_margin must be non-negative and map_dedup_voxel positive".into()));
        }
        if self.matching.neighbors == 0 || self.update.max_iterations == 0 || self.localizer.frames_per_keyframe == 0 {
            return Err(Error::Config("neighbors, max_iterations and keyframe_frames must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.ransac.confidence) {
            return Err(Error::Config("ransac_confidence must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Renders every key with its current value as a loadable config file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
            if k == "sigma_range" {
                out.push_str(&format!("sigma_azimuth_deg = {}\n", self.radar.sigma_azimuth.to_degrees()));
                out.push_str(&format!("sigma_elevation_deg = {}\n", self.radar.sigma_elevation.to_degrees()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Config> {
        Config::parse(s.as_bytes())
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), {
            let mut c = Config::default();
            c.finish().unwrap();
            c
        });
    }

    #[test]
    fn values_are_applied() {
        let c = parse(
            "# tuning\nmode = p2p-only\nneighbors = 7   # fewer\nsigma_azimuth_deg = 1\nmap_dedup_voxel = 0.5\next_translation = 0.1 0 -0.05\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::P2pOnly);
        assert_eq!(c.matching.association, Association::Point);
        assert_eq!(c.matching.neighbors, 7);
        assert!((c.radar.sigma_azimuth - 1f64.to_radians()).abs() < 1e-15);
        assert_eq!(c.local_map.dedup_voxel, Some(0.5));
        assert_eq!(c.init.ext_translation, Vector3::new(0.1, 0.0, -0.05));
    }

    #[test]
    fn unknown_key_fails_fast() {
        match parse("neighbors = 5\nneighbours = 5\n").unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("neighbours"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_lines_fail() {
        for bad in ["neighbors\n", "neighbors = ten\n", "= 3\n", "gravity = -1\n", "neighbors = 5\nneighbors = 6\n", "mode = fast\n"] {
            assert!(parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn rendered_config_roundtrips() {
        let mut c = parse("mode = doppler-only\nmap_radius = 90\njoseph_form = true\next_rotation = 0 1.5707963267948966 0\n").unwrap();
        c.finish().unwrap();
        let again = parse(&c.render()).unwrap();
        assert_eq!(again.entries(), c.entries());
        assert_eq!(again.radar, c.radar);
    }
}
