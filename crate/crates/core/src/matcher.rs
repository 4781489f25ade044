//! Scan-to-map matching: SNR pre-filtering, point-to-distribution association,
//! χ² gating, the iterated update and local-map maintenance.

use std::collections::HashSet;

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::Result;
use crate::ins::{idx, ErrorCovariance, NavState, ERROR_DIM};
use crate::kdtree::KdTree;
use crate::manifold::skew;
use crate::par::{self, ExecPolicy};
use crate::radar::{point_covariance, RadarNoiseParams, RadarPoint};
use crate::update::{iterated_update, InfoAccumulator, Observation, UpdateConfig, UpdateOutcome};

/// χ² quantile at p = 0.95 with 3 degrees of freedom.
pub const CHI2_95_3DOF: f64 = 7.814_727_903_251_178;

/// Fraction of lowest-SNR detections dropped per scan.
pub const SNR_DROP_FRACTION: f64 = 0.05;

/// Keeps detections at or above the 5th percentile of this scan's SNR.
/// Scans with fewer than 5 detections pass through unchanged.
pub fn snr_filter(points: &[RadarPoint]) -> Vec<RadarPoint> {
    if points.len() < 5 {
        return points.to_vec();
    }
    let mut snr: Vec<f64> = points.iter().map(|p| p.snr).collect();
    snr.sort_by(f64::total_cmp);
    let cut = snr[(SNR_DROP_FRACTION * points.len() as f64).floor() as usize];
    points.iter().filter(|p| p.snr >= cut).copied().collect()
}

/// How scan points are associated with the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Association {
    /// Gaussian fitted to the k nearest map points.
    #[default]
    Distribution,
    /// Single nearest map point with an isotropic `ε·I` covariance.
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub association: Association,
    /// Neighbors per Gaussian.
    pub neighbors: usize,
    /// Nearest map point must be within this distance, m.
    pub association_radius: f64,
    /// Multiplier on the neighborhood sample covariance.
    pub inflation: f64,
    /// Added to the inflated covariance, m².
    pub regularization: f64,
    pub min_matches: usize,
    pub chi2_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            association: Association::Distribution,
            neighbors: 10,
            association_radius: 5.0,
            inflation: 2.0,
            regularization: 1e-4,
            min_matches: 10,
            chi2_threshold: CHI2_95_3DOF,
        }
    }
}

/// Gaussian fitted to a map neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodGaussian {
    pub centroid: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub count: usize,
}

/// Mean and unbiased sample covariance of `points` in the given order.
pub fn sample_moments(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len();
    let mut mean = Vector3::zeros();
    for p in points {
        mean += p;
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    if n > 1 {
        for p in points {
            let d = p - mean;
            cov += d * d.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Fits a Gaussian to the neighborhood of `p_w`, or `None` when the nearest
/// map point is beyond the association radius.
pub fn fit_neighborhood(map: &KdTree, p_w: &Vector3<f64>, cfg: &MatchConfig) -> Option<NeighborhoodGaussian> {
    let k = match cfg.association {
        Association::Distribution => cfg.neighbors.max(1),
        Association::Point => 1,
    };
    let nn = map.knn(p_w, k);
    let first = nn.first()?;
    if first.dist2 > cfg.association_radius * cfg.association_radius {
        return None;
    }
    let pts: Vec<Vector3<f64>> = nn.iter().map(|n| n.point).collect();
    let (centroid, cov) = sample_moments(&pts);
    let covariance = match cfg.association {
        Association::Distribution => cov * cfg.inflation + Matrix3::identity() * cfg.regularization,
        Association::Point => Matrix3::identity() * cfg.regularization,
    };
    Some(NeighborhoodGaussian { centroid, covariance, count: pts.len() })
}

/// A radar-frame point with its radar-frame covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPoint {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl MatchPoint {
    pub fn from_radar(pt: &RadarPoint, n: &RadarNoiseParams) -> Self {
        MatchPoint { position: pt.position(), covariance: point_covariance(pt, n) }
    }
}

/// World-frame position of a radar-frame point under state `x`.
pub fn to_world(x: &NavState, p_radar: &Vector3<f64>) -> Vector3<f64> {
    x.attitude * (x.ext_rotation * p_radar + x.ext_translation) + x.position
}

/// Point-to-distribution residual `R (R_ext p + t_ext) + p - p_c`, its
/// Jacobian and covariance `(R R_ext) Σp (R R_ext)ᵀ + Σp_c`.
pub fn p2d_residual(pt: &MatchPoint, x: &NavState, g: &NeighborhoodGaussian, with_extrinsics: bool) -> Observation<3> {
    let r = x.attitude.matrix();
    let q = x.ext_rotation * pt.position + x.ext_translation;
    let residual = r * q + x.position - g.centroid;

    let mut h = SMatrix::<f64, 3, ERROR_DIM>::zeros();
    h.fixed_view_mut::<3, 3>(0, idx::ATT).copy_from(&(-r * skew(&q)));
    h.fixed_view_mut::<3, 3>(0, idx::POS).copy_from(&Matrix3::identity());
    if with_extrinsics {
        let re = x.ext_rotation.matrix();
        h.fixed_view_mut::<3, 3>(0, idx::EXT_ROT).copy_from(&(-r * re * skew(&pt.position)));
        h.fixed_view_mut::<3, 3>(0, idx::EXT_POS).copy_from(r);
    }

    let j = r * x.ext_rotation.matrix();
    let cov = j * pt.covariance * j.transpose() + g.covariance;
    Observation { residual, jacobian: h, covariance: (cov + cov.transpose()) * 0.5 }
}

/// Squared Mahalanobis distance `rᵀ (H P Hᵀ + R)⁻¹ r`.
pub fn mahalanobis2(obs: &Observation<3>, p: &ErrorCovariance) -> Option<f64> {
    let s = obs.jacobian * p * obs.jacobian.transpose() + obs.covariance;
    let chol = s.cholesky()?;
    Some(obs.residual.dot(&chol.solve(&obs.residual)))
}

/// True when the match passes the χ² test.
pub fn chi2_gate(obs: &Observation<3>, p: &ErrorCovariance, threshold: f64) -> bool {
    mahalanobis2(obs, p).is_some_and(|d2| d2 <= threshold)
}

/// Associates every point at state `x` and returns the kept observations in
/// input order.
pub fn associate(
    points: &[MatchPoint],
    x: &NavState,
    p: &ErrorCovariance,
    map: &KdTree,
    cfg: &MatchConfig,
    with_extrinsics: bool,
    policy: ExecPolicy,
) -> Vec<Option<Observation<3>>> {
    par::map(policy, points, |pt| {
        let g = fit_neighborhood(map, &to_world(x, &pt.position), cfg)?;
        let obs = p2d_residual(pt, x, &g, with_extrinsics);
        chi2_gate(&obs, p, cfg.chi2_threshold).then_some(obs)
    })
}

/// Result of a scan-matching update.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// `None` when too few matches survived; the state is then unchanged.
    pub update: Option<UpdateOutcome>,
    /// Matches kept at the first iterate.
    pub initial_matches: usize,
}

/// Iterated ESKF update against `map`, re-associating at every iterate.
pub fn scan_match_update(
    prior: &NavState,
    p: &ErrorCovariance,
    points: &[MatchPoint],
    map: &KdTree,
    mcfg: &MatchConfig,
    ucfg: &UpdateConfig,
    policy: ExecPolicy,
) -> Result<MatchOutcome> {
    let mut initial_matches = None;
    if map.is_empty() {
        return Ok(MatchOutcome { update: None, initial_matches: 0 });
    }
    let update = iterated_update(prior, p, ucfg, |x| {
        let obs = associate(points, x, p, map, mcfg, ucfg.estimate_extrinsics, policy);
        let mut acc = InfoAccumulator::default();
        for o in obs.iter().flatten() {
            acc.add(o)?;
        }
        initial_matches.get_or_insert(acc.blocks);
        if acc.blocks < mcfg.min_matches {
            return Ok(None);
        }
        Ok(Some(acc))
    })?;
    Ok(MatchOutcome { update, initial_matches: initial_matches.unwrap_or(0) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMapConfig {
    /// Points farther than this from the map center are dropped at trim, m.
    pub radius: f64,
    /// Vehicle displacement from the center that triggers a recenter, m.
    pub margin: f64,
    /// Voxel edge for duplicate suppression on insert; `None` disables it.
    pub dedup_voxel: Option<f64>,
}

impl Default for LocalMapConfig {
    fn default() -> Self {
        LocalMapConfig { radius: 150.0, margin: 20.0, dedup_voxel: None }
    }
}

/// Sliding window of registered world-frame points.
#[derive(Debug, Clone)]
pub struct LocalMap {
    tree: KdTree,
    center: Vector3<f64>,
    cfg: LocalMapConfig,
    voxels: HashSet<[i64; 3]>,
    centered: bool,
}

fn voxel_key(p: &Vector3<f64>, size: f64) -> [i64; 3] {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

impl LocalMap {
    pub fn new(cfg: LocalMapConfig) -> Self {
        LocalMap { tree: KdTree::new(), center: Vector3::zeros(), cfg, voxels: HashSet::new(), centered: false }
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.cfg.radius
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// Inserts world points; returns how many were stored.
    pub fn insert_world(&mut self, points: &[Vector3<f64>]) -> usize {
        let mut stored = 0;
        for p in points {
            if let Some(v) = self.cfg.dedup_voxel {
                if !self.voxels.insert(voxel_key(p, v)) {
                    continue;
                }
            }
            self.tree.insert(*p);
            stored += 1;
        }
        stored
    }

    /// Recenters on `position` and drops distant points once the vehicle has
    /// moved past the margin. Returns whether a trim happened.
    pub fn trim(&mut self, position: &Vector3<f64>) -> bool {
        if self.centered && (position - self.center).norm() <= self.cfg.margin {
            return false;
        }
        self.centered = true;
        self.center = *position;
        let removed = self.tree.retain_within(&self.center, self.cfg.radius);
        if let Some(v) = self.cfg.dedup_voxel {
            for p in &removed {
                self.voxels.remove(&voxel_key(p, v));
            }
        }
        true
    }

    /// Transforms radar-frame points with the posterior state, inserts them
    /// and trims the window around the vehicle.
    pub fn augment(&mut self, points: &[Vector3<f64>], x: &NavState) -> usize {
        let world: Vec<Vector3<f64>> = points.iter().map(|p| to_world(x, p)).collect();
        let stored = self.insert_world(&world);
        self.trim(&x.position);
        stored
    }
}
