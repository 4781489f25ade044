//! Text formats: sensor logs, TUM-style trajectories and point lists.
//!
//! Every reader accepts plain text or gzip (detected from the magic bytes)
//! and reports malformed input with its 1-based line number. Writers gzip
//! when the output path ends in `.gz`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::ins::ImuSample;
use crate::manifold::Rotation;
use crate::radar::{RadarPoint, RadarScan};

/// Allowed deviation of a quaternion norm from one.
const QUAT_NORM_TOL: f64 = 1e-6;

/// A timestamped pose (body in world).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub time: f64,
    pub position: Vector3<f64>,
    pub attitude: Rotation,
}

/// Parsed sensor log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub scans: Vec<RadarScan>,
    pub ground_truth: Vec<StampedPose>,
}

/// Opens `path` for buffered reading, transparently decompressing gzip.
pub fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = BufReader::new(File::open(path)?);
    let gz = file.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    Ok(if gz { Box::new(BufReader::new(MultiGzDecoder::new(file))) } else { Box::new(file) })
}

/// Creates `path` for buffered writing, gzip-compressed for `.gz` paths.
pub fn create(path: &Path) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    Ok(if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzEncoder::new(file, Compression::default()))
    } else {
        Box::new(file)
    })
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Numbered, trimmed lines with blanks and `#` comments removed.
struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(r: R) -> Self {
        Lines { inner: r.lines(), number: 0 }
    }

    fn next_line(&mut self) -> Result<Option<(usize, String)>> {
        for line in self.inner.by_ref() {
            self.number += 1;
            let line = line.map_err(|e| perr(self.number, e.to_string()))?;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok(Some((self.number, t.to_string())));
            }
        }
        Ok(None)
    }
}

fn floats<const N: usize>(line: usize, fields: &[&str], what: &str) -> Result<[f64; N]> {
    if fields.len() != N {
        return Err(perr(line, format!("{what}: expected {N} fields, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        let v: f64 = f.parse().map_err(|_| perr(line, format!("{what}: invalid number {f:?}")))?;
        if !v.is_finite() {
            return Err(perr(line, format!("{what}: non-finite value {f:?}")));
        }
        *o = v;
    }
    Ok(out)
}

fn check_time(line: usize, last: &mut Option<f64>, t: f64, what: &str) -> Result<()> {
    if let Some(prev) = *last {
        if t < prev {
            return Err(perr(line, format!("{what} timestamp {t} precedes {prev}")));
        }
    }
    *last = Some(t);
    Ok(())
}

fn parse_pose(line: usize, v: &[f64; 8], what: &str) -> Result<StampedPose> {
    let q = [v[4], v[5], v[6], v[7]];
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(perr(line, format!("{what}: quaternion norm {norm} is not 1")));
    }
    Ok(StampedPose { time: v[0], position: Vector3::new(v[1], v[2], v[3]), attitude: Rotation::from_quaternion(q) })
}

/// Parses a sensor log.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = Lines::new(reader);
    let mut ds = Dataset::default();
    let (mut t_imu, mut t_rad, mut t_gt) = (None, None, None);
    while let Some((n, line)) = lines.next_line()? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "IMU" => {
                let v = floats::<7>(n, &fields[1..], "IMU")?;
                check_time(n, &mut t_imu, v[0], "IMU")?;
                let s = ImuSample::new(v[0], Vector3::new(v[1], v[2], v[3]), Vector3::new(v[4], v[5], v[6]));
                if !s.is_valid() {
                    return Err(perr(n, "IMU: specific force outside sensor range"));
                }
                ds.imu.push(s);
            }
            "RAD" => {
                if fields.len() != 3 {
                    return Err(perr(n, format!("RAD: expected 2 fields, found {}", fields.len() - 1)));
                }
                let t: f64 = fields[1].parse().map_err(|_| perr(n, format!("RAD: invalid timestamp {:?}", fields[1])))?;
                if !t.is_finite() {
                    return Err(perr(n, "RAD: non-finite timestamp"));
                }
                let count: usize = fields[2].parse().map_err(|_| perr(n, format!("RAD: invalid point count {:?}", fields[2])))?;
                check_time(n, &mut t_rad, t, "RAD")?;
                let mut points = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    let (pn, pl) = lines.next_line()?.ok_or_else(|| perr(n, format!("RAD: expected {count} points, file ended")))?;
                    let pf: Vec<&str> = pl.split_whitespace().collect();
                    let v = floats::<5>(pn, &pf, "radar point")?;
                    let pt = RadarPoint::new(v[0], v[1], v[2], v[3], v[4]);
                    if !pt.is_valid() {
                        return Err(perr(pn, "radar point: range must be positive"));
                    }
                    points.push(pt);
                }
                ds.scans.push(RadarScan { time: t, points });
            }
            "GT" => {
                let v = floats::<8>(n, &fields[1..], "GT")?;
                check_time(n, &mut t_gt, v[0], "GT")?;
                ds.ground_truth.push(parse_pose(n, &v, "GT")?);
            }
            other => return Err(perr(n, format!("unknown record type {other:?}"))),
        }
    }
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(open(path)?)
}

fn write_pose<W: Write>(w: &mut W, tag: &str, p: &StampedPose) -> std::io::Result<()> {
    let q = p.attitude.to_quaternion();
    writeln!(
        w,
        "{tag}{:.9} {} {} {} {} {} {} {}",
        p.time, p.position.x, p.position.y, p.position.z, q[0], q[1], q[2], q[3]
    )
}

/// Writes all records merged by timestamp (IMU, then radar, then ground truth
/// on ties).
pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    let (mut i, mut r, mut g) = (0, 0, 0);
    loop {
        let ti = ds.imu.get(i).map_or(f64::INFINITY, |s| s.time);
        let tr = ds.scans.get(r).map_or(f64::INFINITY, |s| s.time);
        let tg = ds.ground_truth.get(g).map_or(f64::INFINITY, |s| s.time);
        if i >= ds.imu.len() && r >= ds.scans.len() && g >= ds.ground_truth.len() {
            break;
        }
        if ti <= tr && ti <= tg && i < ds.imu.len() {
            let s = &ds.imu[i];
            writeln!(w, "IMU {:.9} {} {} {} {} {} {}", s.time, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z)?;
            i += 1;
        } else if tr <= tg && r < ds.scans.len() {
            let s = &ds.scans[r];
            writeln!(w, "RAD {:.9} {}", s.time, s.points.len())?;
            for p in &s.points {
                writeln!(w, "{} {} {} {} {}", p.range, p.azimuth, p.elevation, p.doppler, p.snr)?;
            }
            r += 1;
        } else {
            write_pose(&mut w, "GT ", &ds.ground_truth[g])?;
            g += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a `t px py pz qx qy qz qw` trajectory.
pub fn parse_trajectory<R: BufRead>(reader: R) -> Result<Vec<StampedPose>> {
    let mut lines = Lines::new(reader);
    let mut out = Vec::new();
    let mut last = None;
    while let Some((n, line)) = lines.next_line()? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let v = floats::<8>(n, &fields, "pose")?;
        if let Some(prev) = last {
            if v[0] <= prev {
                return Err(perr(n, format!("pose timestamp {} does not advance past {prev}", v[0])));
            }
        }
        last = Some(v[0]);
        out.push(parse_pose(n, &v, "pose")?);
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    parse_trajectory(open(path)?)
}

pub fn write_trajectory<W: Write>(mut w: W, poses: &[StampedPose]) -> Result<()> {
    for p in poses {
        write_pose(&mut w, "", p)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an `x y z` point list.
pub fn parse_points<R: BufRead>(reader: R) -> Result<Vec<Vector3<f64>>> {
    let mut lines = Lines::new(reader);
    let mut out = Vec::new();
    while let Some((n, line)) = lines.next_line()? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let v = floats::<3>(n, &fields, "point")?;
        out.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>> {
    parse_points(open(path)?)
}

pub fn write_points<W: Write>(mut w: W, points: &[Vector3<f64>]) -> Result<()> {
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}
