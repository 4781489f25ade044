//! Trajectory metrics: absolute pose error and loop-closure error.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::dataset::StampedPose;
use crate::error::{Error, Result};
use crate::manifold::Rotation;

/// Maximum timestamp difference for an estimate/ground-truth pair, s.
pub const MAX_ASSOCIATION_DT: f64 = 0.01;
/// Fewer associated pairs than this is an error.
pub const MIN_PAIRS: usize = 10;

/// How the estimate is aligned to ground truth before computing errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Rigid transform mapping the first associated estimate onto its ground truth.
    #[default]
    First,
    None,
    /// Least-squares rigid fit over all positions (no scale).
    Umeyama,
}

impl FromStr for Alignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Alignment::First),
            "none" => Ok(Alignment::None),
            "umeyama" => Ok(Alignment::Umeyama),
            _ => Err(Error::Eval(format!("unknown alignment {s:?} (expected first, none or umeyama)"))),
        }
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::First => "first",
            Alignment::None => "none",
            Alignment::Umeyama => "umeyama",
        })
    }
}

/// Pairs each estimate with the nearest-in-time ground-truth pose within
/// [`MAX_ASSOCIATION_DT`]. Ground truth must be time-sorted.
pub fn associate(est: &[StampedPose], gt: &[StampedPose]) -> Vec<(StampedPose, StampedPose)> {
    let mut out = Vec::new();
    for e in est {
        let i = gt.partition_point(|g| g.time < e.time);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| gt.get(j))
            .min_by(|a, b| (a.time - e.time).abs().total_cmp(&(b.time - e.time).abs()));
        if let Some(g) = best {
            if (g.time - e.time).abs() <= MAX_ASSOCIATION_DT + 1e-12 {
                out.push((*e, *g));
            }
        }
    }
    out
}

/// Rigid transform `(R, t)` applied as `p ↦ R p + t`, `A ↦ R A`.
fn alignment(pairs: &[(StampedPose, StampedPose)], mode: Alignment) -> (Rotation, Vector3<f64>) {
    match mode {
        Alignment::None => (Rotation::identity(), Vector3::zeros()),
        Alignment::First => {
            let (e, g) = &pairs[0];
            let r = g.attitude * e.attitude.inverse();
            (r, g.position - r * e.position)
        }
        Alignment::Umeyama => {
            let n = pairs.len() as f64;
            let me = pairs.iter().map(|(e, _)| e.position).sum::<Vector3<f64>>() / n;
            let mg = pairs.iter().map(|(_, g)| g.position).sum::<Vector3<f64>>() / n;
            let mut cov = Matrix3::zeros();
            for (e, g) in pairs {
                cov += (g.position - mg) * (e.position - me).transpose();
            }
            let svd = cov.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut s = Matrix3::identity();
            if (u * vt).determinant() < 0.0 {
                s[(2, 2)] = -1.0;
            }
            let r = Rotation::from_matrix_unchecked(u * s * vt);
            (r, mg - r * me)
        }
    }
}

/// Absolute pose error over associated pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ape {
    pub translation_rmse: f64,
    pub rotation_rmse_deg: f64,
    /// `(time, translation error)` per associated pair.
    pub translation_errors: Vec<(f64, f64)>,
}

impl Ape {
    pub fn pairs(&self) -> usize {
        self.translation_errors.len()
    }

    /// Translation RMSE over the `k`-th of `n` equal consecutive slices.
    pub fn slice_rmse(&self, k: usize, n: usize) -> f64 {
        let len = self.translation_errors.len();
        let (a, b) = (k * len / n, (k + 1) * len / n);
        let s = &self.translation_errors[a..b.max(a + 1).min(len)];
        (s.iter().map(|(_, e)| e * e).sum::<f64>() / s.len() as f64).sqrt()
    }
}

pub fn ape_rmse(est: &[StampedPose], gt: &[StampedPose], mode: Alignment) -> Result<Ape> {
    let pairs = associate(est, gt);
    if pairs.len() < MIN_PAIRS {
        return Err(Error::Eval(format!("only {} pose pairs within {MAX_ASSOCIATION_DT} s; need {MIN_PAIRS}", pairs.len())));
    }
    let (r, t) = alignment(&pairs, mode);
    let mut sq_t = 0.0;
    let mut sq_r = 0.0;
    let mut translation_errors = Vec::with_capacity(pairs.len());
    for (e, g) in &pairs {
        let p = r * e.position + t;
        let a = r * e.attitude;
        let et = (g.position - p).norm();
        let er = g.attitude.angle_to(&a);
        sq_t += et * et;
        sq_r += er * er;
        translation_errors.push((e.time, et));
    }
    let n = pairs.len() as f64;
    Ok(Ape { translation_rmse: (sq_t / n).sqrt(), rotation_rmse_deg: (sq_r / n).sqrt().to_degrees(), translation_errors })
}

/// Distance between the first and last positions.
pub fn loop_closure_error(est: &[StampedPose]) -> Result<f64> {
    match (est.first(), est.last()) {
        (Some(a), Some(b)) if est.len() >= 2 => Ok((b.position - a.position).norm()),
        _ => Err(Error::Eval("loop closure needs at least two poses".into())),
    }
}
