//! Keyframe accumulation and keyframe-to-prior-map updates.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::Result;
use crate::ins::{ErrorCovariance, NavState};
use crate::kdtree::{dist2, KdTree};
use crate::manifold::Rotation;
use crate::matcher::{scan_match_update, MatchConfig, MatchOutcome, MatchPoint};
use crate::par::ExecPolicy;
use crate::update::UpdateConfig;

/// A point carried in a keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePoint {
    pub point: MatchPoint,
    pub source_frame: u64,
}

/// Several consecutive scans expressed in the newest scan's radar frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub time: f64,
    pub points: Vec<KeyframePoint>,
    pub frames: usize,
}

impl Keyframe {
    pub fn match_points(&self) -> Vec<MatchPoint> {
        self.points.iter().map(|p| p.point).collect()
    }
}

/// One scan's static points with the radar pose (world from radar) at scan time.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeInput {
    pub frame_id: u64,
    pub time: f64,
    pub points: Vec<MatchPoint>,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

/// Projects every frame into the last one. Points keep their sensor
/// covariance, rotated into the anchor frame.
pub fn accumulate_keyframe(frames: &[KeyframeInput]) -> Option<Keyframe> {
    let anchor = frames.last()?;
    let ra_t = anchor.rotation.inverse();
    let mut points = Vec::with_capacity(frames.iter().map(|f| f.points.len()).sum());
    for f in frames {
        let r_rel = (ra_t * f.rotation).matrix().to_owned();
        let t_rel = ra_t * (f.translation - anchor.translation);
        for p in &f.points {
            let cov = r_rel * p.covariance * r_rel.transpose();
            points.push(KeyframePoint {
                point: MatchPoint { position: r_rel * p.position + t_rel, covariance: (cov + cov.transpose()) * 0.5 },
                source_frame: f.frame_id,
            });
        }
    }
    Some(Keyframe { time: anchor.time, points, frames: frames.len() })
}

fn voxel_of(p: &Vector3<f64>, size: f64) -> [i64; 3] {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

/// Keeps points that have another point within `dist_threshold` in their own
/// or one of the 26 adjacent voxels. For `dist_threshold <= voxel_size` this
/// is exactly a radius-neighbor filter. With `occupancy_shortcut` a voxel
/// holding two or more points keeps all of them without a distance check.
pub fn voxel_outlier_removal(
    points: &[Vector3<f64>],
    voxel_size: f64,
    dist_threshold: f64,
    occupancy_shortcut: bool,
) -> Vec<usize> {
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(voxel_of(p, voxel_size)).or_default().push(i);
    }
    let r2 = dist_threshold * dist_threshold;
    let mut kept = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let v = voxel_of(p, voxel_size);
        if occupancy_shortcut && grid[&v].len() >= 2 {
            kept.push(i);
            continue;
        }
        let mut found = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = grid.get(&[v[0] + dx, v[1] + dy, v[2] + dz]) {
                        if cell.iter().any(|&j| j != i && dist2(&points[j], p) <= r2) {
                            found = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        if found {
            kept.push(i);
        }
    }
    kept
}

/// Brute-force radius-neighbor filter.
pub fn radius_outlier_removal(points: &[Vector3<f64>], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    (0..points.len())
        .filter(|&i| points.iter().enumerate().any(|(j, q)| j != i && dist2(q, &points[i]) <= r2))
        .collect()
}

/// Fixed world-frame point set used to bound drift.
#[derive(Debug, Clone)]
pub struct PriorMap {
    tree: KdTree,
}

impl PriorMap {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        PriorMap { tree: KdTree::from_points(points) }
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizerConfig {
    /// Scans per keyframe.
    pub frames_per_keyframe: usize,
    pub voxel_size: f64,
    pub dist_threshold: f64,
    /// Keep every point of a voxel holding two or more points.
    pub occupancy_shortcut: bool,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            frames_per_keyframe: 10,
            voxel_size: 1.0,
            dist_threshold: 1.0,
            occupancy_shortcut: false,
        }
    }
}

/// Keyframe point matching against the prior map. Same residual, gate and
/// iterated update as scan-to-map matching.
pub fn prior_map_update(
    x: &NavState,
    p: &ErrorCovariance,
    kf: &Keyframe,
    map: &PriorMap,
    mcfg: &MatchConfig,
    ucfg: &UpdateConfig,
    policy: ExecPolicy,
) -> Result<MatchOutcome> {
    scan_match_update(x, p, &kf.match_points(), &map.tree, mcfg, ucfg, policy)
}

/// Collects scans and emits a filtered keyframe every `frames_per_keyframe`.
#[derive(Debug, Clone)]
pub struct KeyframeAccumulator {
    cfg: LocalizerConfig,
    pending: Vec<KeyframeInput>,
}

impl KeyframeAccumulator {
    pub fn new(cfg: LocalizerConfig) -> Self {
        KeyframeAccumulator { cfg, pending: Vec::new() }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Adds a scan; returns a keyframe when the frame count is reached and
    /// starts accumulating afresh.
    pub fn push(&mut self, frame: KeyframeInput) -> Option<Keyframe> {
        self.pending.push(frame);
        if self.pending.len() < self.cfg.frames_per_keyframe.max(1) {
            return None;
        }
        let frames = std::mem::take(&mut self.pending);
        let kf = accumulate_keyframe(&frames)?;
        let positions: Vec<Vector3<f64>> = kf.points.iter().map(|p| p.point.position).collect();
        let keep = voxel_outlier_removal(&positions, self.cfg.voxel_size, self.cfg.dist_threshold, self.cfg.occupancy_shortcut);
        Some(Keyframe { points: keep.into_iter().map(|i| kf.points[i]).collect(), ..kf })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ins::tests::rand_vec;
    use crate::ins::{idx, ErrorVector};
    use crate::manifold::exp_so3;
    use nalgebra::Matrix3;
    use crate::matcher::tests::{cluster_map, structured_map};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn frame(id: u64, pts: Vec<MatchPoint>, r: Rotation, t: Vector3<f64>) -> KeyframeInput {
        KeyframeInput { frame_id: id, time: id as f64 * 0.05, points: pts, rotation: r, translation: t }
    }

    fn mp(p: Vector3<f64>, c: Matrix3<f64>) -> MatchPoint {
        MatchPoint { position: p, covariance: c }
    }

    #[test]
    fn single_frame_keyframe_is_input() {
        let pts = vec![mp(Vector3::new(1.0, 2.0, 3.0), Matrix3::identity() * 0.3)];
        let kf = accumulate_keyframe(&[frame(0, pts.clone(), Rotation::identity(), Vector3::zeros())]).unwrap();
        assert_eq!(kf.match_points(), pts);
        assert_eq!(kf.frames, 1);
    }

    #[test]
    fn translation_shifts_points_only() {
        let c = Matrix3::new(1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 3.0);
        let old = frame(0, vec![mp(Vector3::new(5.0, 0.0, 0.0), c)], Rotation::identity(), Vector3::zeros());
        let new = frame(1, vec![], Rotation::identity(), Vector3::new(1.0, 0.0, 0.0));
        let kf = accumulate_keyframe(&[old, new]).unwrap();
        assert_eq!(kf.points[0].point.position, Vector3::new(4.0, 0.0, 0.0));
        assert_eq!(kf.points[0].point.covariance, c);
        assert_eq!(kf.points[0].source_frame, 0);
    }

    #[test]
    fn transported_covariance_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let ra = exp_so3(&rand_vec(&mut rng, 1.5));
            let rf = exp_so3(&rand_vec(&mut rng, 1.5));
            let (ta, tf) = (rand_vec(&mut rng, 10.0), rand_vec(&mut rng, 10.0));
            let l = Matrix3::new(0.3, 0.0, 0.0, 0.1, 0.2, 0.0, -0.05, 0.02, 0.1);
            let cov = l * l.transpose();
            let p = rand_vec(&mut rng, 20.0);
            let kf = accumulate_keyframe(&[frame(0, vec![mp(p, cov)], rf, tf), frame(1, vec![], ra, ta)]).unwrap();
            let analytic = kf.points[0].point.covariance;

            let n = 200_000;
            let samples: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    let e = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                    let noisy = mp(p + l * e, cov);
                    let kf = accumulate_keyframe(&[frame(0, vec![noisy], rf, tf), frame(1, vec![], ra, ta)]).unwrap();
                    kf.points[0].point.position
                })
                .collect();
            let mean = samples.iter().sum::<Vector3<f64>>() / n as f64;
            let mc = samples.iter().map(|s| (s - mean) * (s - mean).transpose()).sum::<Matrix3<f64>>() / (n - 1) as f64;
            let rel = (mc - analytic).norm() / analytic.norm();
            assert!(rel < 0.05, "relative covariance error {rel}");
        }
    }

    #[test]
    fn voxel_filter_examples() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0)];
        assert_eq!(voxel_outlier_removal(&pts, 1.0, 0.5, false), vec![0, 1]);
        let mut cluster: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64 * 0.2, 0.0, 0.0)).collect();
        cluster.push(Vector3::new(100.0, 0.0, 0.0));
        let kept = voxel_outlier_removal(&cluster, 1.0, 1.0, false);
        assert_eq!(kept, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn occupancy_shortcut_keeps_crowded_voxels() {
        // 0.9 m apart in the same 1 m voxel, threshold 0.5 m.
        let pts = [Vector3::new(0.05, 0.5, 0.5), Vector3::new(0.95, 0.5, 0.5)];
        assert!(voxel_outlier_removal(&pts, 1.0, 0.5, false).is_empty());
        assert_eq!(voxel_outlier_removal(&pts, 1.0, 0.5, true), vec![0, 1]);
    }

    #[test]
    fn voxel_filter_equals_radius_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vector3<f64>> = (0..2000).map(|_| rand_vec(&mut rng, 20.0)).collect();
        for (voxel, thr) in [(1.0, 1.0), (2.0, 1.3), (0.7, 0.5)] {
            assert_eq!(voxel_outlier_removal(&pts, voxel, thr, false), radius_outlier_removal(&pts, thr));
        }
    }

    #[test]
    fn accumulator_emits_every_m_frames() {
        let cfg = LocalizerConfig { frames_per_keyframe: 3, ..Default::default() };
        let mut acc = KeyframeAccumulator::new(cfg);
        let pts: Vec<MatchPoint> = (0..5).map(|i| mp(Vector3::new(i as f64 * 0.1, 0.0, 0.0), Matrix3::identity() * 0.01)).collect();
        let mut emitted = Vec::new();
        for id in 0..10 {
            if let Some(kf) = acc.push(frame(id, pts.clone(), Rotation::identity(), Vector3::zeros())) {
                emitted.push((id, kf));
            }
        }
        assert_eq!(emitted.iter().map(|(id, _)| *id).collect::<Vec<_>>(), vec![2, 5, 8]);
        let sources: Vec<Vec<u64>> = emitted
            .iter()
            .map(|(_, kf)| {
                let mut s: Vec<u64> = kf.points.iter().map(|p| p.source_frame).collect();
                s.dedup();
                s
            })
            .collect();
        assert_eq!(sources, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]]);
        assert_eq!(acc.pending(), 1);
    }

    fn keyframe_for(x: &NavState, world: &[Vector3<f64>]) -> Keyframe {
        let (r, t) = x.radar_pose();
        let points = world
            .iter()
            .map(|w| KeyframePoint { point: mp(r.inverse() * (w - t), Matrix3::identity() * 0.01), source_frame: 0 })
            .collect();
        Keyframe { time: 0.0, points, frames: 1 }
    }

    #[test]
    fn aligned_keyframe_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let centers: Vec<Vector3<f64>> = (0..200).map(|_| rand_vec(&mut rng, 40.0)).collect();
        let map = PriorMap { tree: cluster_map(&centers) };
        let x = NavState { position: Vector3::new(7.0, 7.0, 7.0), attitude: Rotation::from_euler(0.1, 0.0, -1.0), ..NavState::default() };
        let kf = keyframe_for(&x, &centers);
        let cfg = MatchConfig { neighbors: 6, ..Default::default() };
        let out = prior_map_update(&x, &(ErrorCovariance::identity() * 0.1), &kf, &map, &cfg, &UpdateConfig::default(), ExecPolicy::Parallel).unwrap();
        let up = out.update.unwrap();
        assert!((up.state.position - x.position).norm() < 1e-9);
        assert!(up.state.attitude.angle_to(&x.attitude) < 1e-9);
    }

    #[test]
    fn offset_pose_is_pulled_back_to_the_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let world = structured_map(0.25, 20.0);
        let map = PriorMap::new(&world);
        let truth = NavState { position: Vector3::new(10.0, 10.0, 8.0), attitude: Rotation::from_euler(0.02, 0.01, 0.3), ..NavState::default() };
        let sample: Vec<Vector3<f64>> = (0..2000).map(|_| world[rng.random_range(0..world.len())]).collect();
        let kf = keyframe_for(&truth, &sample);
        let prior = NavState { position: truth.position + Vector3::new(1.0, 1.0, 0.0), ..truth };
        let mut diag = ErrorVector::from_element(1e-4);
        diag.fixed_rows_mut::<3>(idx::POS).fill(4.0);
        let p = ErrorCovariance::from_diagonal(&diag);
        let ucfg = UpdateConfig { max_iterations: 10, ..Default::default() };
        let out = prior_map_update(&prior, &p, &kf, &map, &MatchConfig::default(), &ucfg, ExecPolicy::Parallel).unwrap();
        let err = (out.update.unwrap().state.position - truth.position).norm();
        assert!(err < 0.1, "posterior error {err}");
    }
}
