//! Radar detections, the spherical noise model, Doppler residuals with their
//! Jacobians and uncertainty, 3σ Doppler gating and RANSAC ego-velocity.
//!
//! Doppler convention: for a static target the measured Doppler equals the
//! projection of the radar's ego-velocity (in the radar frame) onto the unit
//! direction of the detection.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ins::{idx, ErrorCovariance, NavState, ERROR_DIM};
use crate::manifold::{skew, Direction, Rotation};
use crate::par::{self, ExecPolicy};
use crate::update::{iterated_update, InfoAccumulator, Observation, UpdateConfig, UpdateOutcome};

/// One radar detection in spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    /// m
    pub range: f64,
    /// rad, measured in the radar x-y plane from +x toward +y.
    pub azimuth: f64,
    /// rad, measured from the x-y plane toward +z.
    pub elevation: f64,
    /// m/s
    pub doppler: f64,
    /// dB
    pub snr: f64,
}

impl RadarPoint {
    pub fn new(range: f64, azimuth: f64, elevation: f64, doppler: f64, snr: f64) -> Self {
        RadarPoint { range, azimuth, elevation, doppler, snr }
    }

    /// Builds a detection from a Cartesian radar-frame position.
    pub fn from_cartesian(p: &Vector3<f64>, doppler: f64, snr: f64) -> Self {
        let range = p.norm();
        RadarPoint {
            range,
            azimuth: p.y.atan2(p.x),
            elevation: (p.z / range).clamp(-1.0, 1.0).asin(),
            doppler,
            snr,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.range > 0.0
            && [self.range, self.azimuth, self.elevation, self.doppler, self.snr]
                .iter()
                .all(|v| v.is_finite())
    }

    /// Unit direction of the detection in the radar frame.
    pub fn unit_direction(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }

    pub fn direction(&self) -> Direction {
        Direction::new(&self.unit_direction()).expect("unit by construction")
    }

    /// Cartesian position in the radar frame.
    pub fn position(&self) -> Vector3<f64> {
        self.unit_direction() * self.range
    }
}

/// A timestamped frame of detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadarScan {
    pub time: f64,
    pub points: Vec<RadarPoint>,
}

/// Standard deviations of the radar measurement model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarNoiseParams {
    pub sigma_range: f64,
    pub sigma_azimuth: f64,
    pub sigma_elevation: f64,
    pub sigma_doppler: f64,
}

impl Default for RadarNoiseParams {
    fn default() -> Self {
        RadarNoiseParams {
            sigma_range: 0.1,
            sigma_azimuth: 0.5f64.to_radians(),
            sigma_elevation: 0.5f64.to_radians(),
            sigma_doppler: 0.1,
        }
    }
}

impl RadarNoiseParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_range, self.sigma_azimuth, self.sigma_elevation, self.sigma_doppler];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("radar noise standard deviations must be positive".into()))
        }
    }
}

/// Radar-frame covariance of the Cartesian point, first-order propagated
/// from independent range/azimuth/elevation noise.
pub fn point_covariance(pt: &RadarPoint, n: &RadarNoiseParams) -> Matrix3<f64> {
    let (se, ce) = pt.elevation.sin_cos();
    let (sa, ca) = pt.azimuth.sin_cos();
    let r = pt.range;
    let j = Matrix3::new(
        ce * ca, -r * ce * sa, -r * se * ca,
        ce * sa, r * ce * ca, -r * se * sa,
        se, 0.0, r * ce,
    );
    let d = Matrix3::from_diagonal(&Vector3::new(
        n.sigma_range.powi(2),
        n.sigma_azimuth.powi(2),
        n.sigma_elevation.powi(2),
    ));
    let c = j * d * j.transpose();
    (c + c.transpose()) * 0.5
}

/// Doppler residual `z = dᵀ R_extᵀ (Rᵀ v + (ω_m - b_g)^ t_ext) - v_d`, its
/// Jacobian row and its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerResidual {
    pub residual: f64,
    pub jacobian: SMatrix<f64, 1, ERROR_DIM>,
    pub variance: f64,
}

impl DopplerResidual {
    pub fn observation(&self) -> Observation<1> {
        Observation {
            residual: SVector::<f64, 1>::new(self.residual),
            jacobian: self.jacobian,
            covariance: SMatrix::<f64, 1, 1>::new(self.variance),
        }
    }

    /// Residual variance including the state uncertainty `H P Hᵀ`.
    pub fn innovation_variance(&self, p: &ErrorCovariance) -> f64 {
        (self.jacobian * p * self.jacobian.transpose())[(0, 0)] + self.variance
    }
}

/// Linearizes the Doppler measurement of one detection.
///
/// `gyro` is the raw angular-rate measurement nearest the scan; the gyro bias
/// of `x` is subtracted here. Extrinsic columns are filled only when
/// `with_extrinsics` is set.
pub fn doppler_residual(
    pt: &RadarPoint,
    x: &NavState,
    gyro: &Vector3<f64>,
    n: &RadarNoiseParams,
    with_extrinsics: bool,
) -> DopplerResidual {
    let dir = pt.direction();
    let d = *dir.as_vector();
    let r_t = x.attitude.matrix().transpose();
    let ext_t = x.ext_rotation.matrix().transpose();
    let omega = gyro - x.gyro_bias;
    let body_vel = r_t * x.velocity;
    let w = body_vel + omega.cross(&x.ext_translation);
    let k = ext_t * w;
    let residual = d.dot(&k) - pt.doppler;

    let dt = d.transpose() * ext_t;
    let mut h = SMatrix::<f64, 1, ERROR_DIM>::zeros();
    h.fixed_view_mut::<1, 3>(0, idx::ATT).copy_from(&(dt * skew(&body_vel)));
    h.fixed_view_mut::<1, 3>(0, idx::VEL).copy_from(&(dt * r_t));
    h.fixed_view_mut::<1, 3>(0, idx::BG).copy_from(&(dt * skew(&x.ext_translation)));
    if with_extrinsics {
        h.fixed_view_mut::<1, 3>(0, idx::EXT_ROT).copy_from(&(d.transpose() * skew(&k)));
        h.fixed_view_mut::<1, 3>(0, idx::EXT_POS).copy_from(&(dt * skew(&omega)));
    }

    let j_dir = k.transpose() * dir.perturbation_map();
    let sigma_dir = Matrix2::new(n.sigma_azimuth.powi(2), 0.0, 0.0, n.sigma_elevation.powi(2));
    let variance = (j_dir * sigma_dir * j_dir.transpose())[(0, 0)] + n.sigma_doppler.powi(2);

    DopplerResidual { residual, jacobian: h, variance }
}

/// Result of 3σ Doppler gating over one scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DopplerGate {
    /// Indices into the scan of static, consistent detections.
    pub inliers: Vec<usize>,
    /// Indices of dynamic or noisy detections.
    pub outliers: Vec<usize>,
    /// Linearizations of the inliers, in `inliers` order.
    pub residuals: Vec<DopplerResidual>,
}

impl DopplerGate {
    /// True when no detection survived, so the Doppler update must be skipped.
    pub fn update_skipped(&self) -> bool {
        self.inliers.is_empty()
    }
}

/// Keeps a detection iff `z² ≤ 9 (σ² + H P Hᵀ)`.
pub fn gate_doppler(
    scan: &RadarScan,
    x: &NavState,
    p: &ErrorCovariance,
    gyro: &Vector3<f64>,
    n: &RadarNoiseParams,
    with_extrinsics: bool,
    policy: ExecPolicy,
) -> DopplerGate {
    let lin = par::map(policy, &scan.points, |pt| {
        let d = doppler_residual(pt, x, gyro, n, with_extrinsics);
        let keep = d.residual * d.residual <= 9.0 * d.innovation_variance(p);
        (d, keep)
    });
    let mut gate = DopplerGate::default();
    for (i, (d, keep)) in lin.into_iter().enumerate() {
        if keep {
            gate.inliers.push(i);
            gate.residuals.push(d);
        } else {
            gate.outliers.push(i);
        }
    }
    gate
}

/// Single-shot batched Doppler update over the gated inliers.
pub fn doppler_update(
    x: &NavState,
    p: &ErrorCovariance,
    gate: &DopplerGate,
    cfg: &UpdateConfig,
) -> Result<Option<UpdateOutcome>> {
    if gate.update_skipped() {
        return Ok(None);
    }
    let single = UpdateConfig { max_iterations: 1, ..*cfg };
    iterated_update(x, p, &single, |_| {
        let mut acc = InfoAccumulator::default();
        for d in &gate.residuals {
            acc.add(&d.observation())?;
        }
        Ok(Some(acc))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold on |dᵀv - v_d|, m/s.
    pub threshold: f64,
    pub min_iterations: usize,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig { threshold: 0.2, min_iterations: 17, max_iterations: 500, confidence: 0.99, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgoVelocity {
    /// Radar ego-velocity in the radar frame, m/s.
    pub velocity: Vector3<f64>,
    pub inliers: Vec<bool>,
}

fn least_squares(dirs: &[Vector3<f64>], dopplers: &[f64], mask: impl Fn(usize) -> bool) -> Option<Vector3<f64>> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (i, (d, v)) in dirs.iter().zip(dopplers).enumerate() {
        if mask(i) {
            ata += d * d.transpose();
            atb += d * *v;
        }
    }
    let eig = ata.symmetric_eigenvalues();
    if eig.max() <= 0.0 || eig.min() < 1e-9 * eig.max() {
        return None;
    }
    ata.cholesky().map(|c| c.solve(&atb))
}

/// Radar ego-velocity from radial Doppler by RANSAC over 3-point minimal
/// sets followed by a least-squares refit on the consensus set.
pub fn ransac_ego_velocity(scan: &RadarScan, cfg: &RansacConfig) -> Result<EgoVelocity> {
    let dirs: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.unit_direction()).collect();
    let dopplers: Vec<f64> = scan.points.iter().map(|p| p.doppler).collect();
    let n = dirs.len();
    if n < 3 || least_squares(&dirs, &dopplers, |_| true).is_none() {
        return Err(Error::Degenerate("direction matrix rank < 3"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = |v: &Vector3<f64>| {
        dirs.iter().zip(&dopplers).filter(|(d, z)| (d.dot(v) - **z).abs() <= cfg.threshold).count()
    };
    let mut best: Option<(usize, Vector3<f64>)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.max(cfg.min_iterations) && it < cfg.max_iterations {
        it += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let a = Matrix3::from_rows(&[dirs[i].transpose(), dirs[j].transpose(), dirs[k].transpose()]);
        if a.determinant().abs() < 1e-6 {
            continue;
        }
        let Some(v) = a.lu().solve(&Vector3::new(dopplers[i], dopplers[j], dopplers[k])) else {
            continue;
        };
        let c = count(&v);
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, v));
            let w = c as f64 / n as f64;
            let denom = (1.0 - w.powi(3)).ln();
            needed = if denom < 0.0 {
                ((1.0 - cfg.confidence).ln() / denom).ceil().max(0.0) as usize
            } else {
                0
            };
        }
    }

    let (_, v) = best.ok_or(Error::Degenerate("no non-degenerate minimal sample"))?;
    let inliers: Vec<bool> = dirs
        .iter()
        .zip(&dopplers)
        .map(|(d, z)| (d.dot(&v) - z).abs() <= cfg.threshold)
        .collect();
    let refit = least_squares(&dirs, &dopplers, |i| inliers[i]).ok_or(Error::Degenerate("consensus set rank < 3"))?;
    let inliers = dirs
        .iter()
        .zip(&dopplers)
        .map(|(d, z)| (d.dot(&refit) - z).abs() <= cfg.threshold)
        .collect();
    Ok(EgoVelocity { velocity: refit, inliers })
}

/// Radar-frame ego-velocity implied by a state and angular rate.
pub fn radar_velocity(x: &NavState, gyro: &Vector3<f64>) -> Vector3<f64> {
    let omega = gyro - x.gyro_bias;
    x.ext_rotation.inverse() * (x.attitude.inverse() * x.velocity + omega.cross(&x.ext_translation))
}

/// Identity extrinsics placeholder used by tests and tools.
pub fn identity_extrinsics() -> (Rotation, Vector3<f64>) {
    (Rotation::identity(), Vector3::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ins::tests::{rand_vec, random_state, rel_err};
    use crate::ins::ErrorVector;
    use rand_distr::{Distribution, Normal};

    fn noise() -> RadarNoiseParams {
        RadarNoiseParams::default()
    }

    #[test]
    fn cartesian_round_trip() {
        let p = Vector3::new(3.0, -4.0, 12.0);
        let pt = RadarPoint::from_cartesian(&p, 0.0, 10.0);
        assert!((pt.range - 13.0).abs() < 1e-12);
        assert!((pt.position() - p).norm() < 1e-12);
        assert!((pt.direction().as_vector() * pt.range - pt.position()).norm() < 1e-9);
    }

    #[test]
    fn range_only_noise_lies_along_ray() {
        let n = RadarNoiseParams { sigma_azimuth: 0.0, sigma_elevation: 0.0, ..noise() };
        let c = point_covariance(&RadarPoint::new(20.0, 0.0, 0.0, 0.0, 0.0), &n);
        let expect = Matrix3::from_diagonal(&Vector3::new(0.01, 0.0, 0.0));
        assert!((c - expect).abs().max() < 1e-15);
    }

    #[test]
    fn doubling_range_scales_tangential_eigenvalues() {
        let pt = RadarPoint::new(30.0, 0.4, -0.3, 0.0, 0.0);
        let far = RadarPoint { range: 60.0, ..pt };
        let n = RadarNoiseParams { sigma_azimuth: 0.01, sigma_elevation: 0.02, ..noise() };
        let (c1, c2) = (point_covariance(&pt, &n), point_covariance(&far, &n));
        let d = pt.unit_direction();
        assert!(((d.transpose() * c1 * d)[0] - 0.01).abs() < 1e-12);
        assert!(((d.transpose() * c2 * d)[0] - 0.01).abs() < 1e-12);
        let basis = pt.direction().tangent_basis();
        let t1 = basis.transpose() * c1 * basis;
        let t2 = basis.transpose() * c2 * basis;
        assert!((t2 - t1 * 4.0).abs().max() < 1e-12);
    }

    #[test]
    fn point_covariance_matches_monte_carlo() {
        let pt = RadarPoint::new(40.0, 0.3, -0.6, 0.0, 0.0);
        let n = RadarNoiseParams { sigma_range: 0.1, sigma_azimuth: 0.002, sigma_elevation: 0.003, sigma_doppler: 0.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (nr, na, ne) = (
            Normal::new(0.0, n.sigma_range).unwrap(),
            Normal::new(0.0, n.sigma_azimuth).unwrap(),
            Normal::new(0.0, n.sigma_elevation).unwrap(),
        );
        let samples = 1_000_000;
        let mut mean = Vector3::zeros();
        let mut outer = Matrix3::zeros();
        for _ in 0..samples {
            let q = RadarPoint::new(pt.range + nr.sample(&mut rng), pt.azimuth + na.sample(&mut rng), pt.elevation + ne.sample(&mut rng), 0.0, 0.0).position();
            let d = q - pt.position();
            mean += d;
            outer += d * d.transpose();
        }
        let s = samples as f64;
        mean /= s;
        let mc = outer / s - mean * mean.transpose();
        let analytic = point_covariance(&pt, &n);
        let rel = (mc - analytic).norm() / analytic.norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn doppler_examples() {
        let n = noise();
        let x = NavState::default();
        let pt = RadarPoint::from_cartesian(&Vector3::new(3.0, 4.0, 0.0), 0.7, 10.0);
        let d = doppler_residual(&pt, &x, &Vector3::zeros(), &n, false);
        assert!((d.residual + 0.7).abs() < 1e-15);
        assert!((d.variance - 0.01).abs() < 1e-15);

        let x = NavState { velocity: Vector3::new(1.0, 0.0, 0.0), ..NavState::default() };
        let pt = RadarPoint::from_cartesian(&Vector3::new(10.0, 0.0, 0.0), 1.0, 10.0);
        assert!(doppler_residual(&pt, &x, &Vector3::zeros(), &n, false).residual.abs() < 1e-15);

        let x = NavState { ext_translation: Vector3::new(1.0, 0.0, 0.0), ..NavState::default() };
        let pt = RadarPoint::from_cartesian(&Vector3::new(0.0, 5.0, 0.0), 0.0, 10.0);
        let d = doppler_residual(&pt, &x, &Vector3::new(0.0, 0.0, 1.0), &n, false);
        assert!((d.residual - 1.0).abs() < 1e-12);
    }

    fn numeric_doppler_jacobian(pt: &RadarPoint, x: &NavState, gyro: &Vector3<f64>) -> SMatrix<f64, 1, ERROR_DIM> {
        let h = 1e-6;
        let mut j = SMatrix::<f64, 1, ERROR_DIM>::zeros();
        for k in 0..ERROR_DIM {
            let mut d = ErrorVector::zeros();
            d[k] = h;
            let plus = doppler_residual(pt, &x.boxplus(&d), gyro, &noise(), true).residual;
            let minus = doppler_residual(pt, &x.boxplus(&(-d)), gyro, &noise(), true).residual;
            j[k] = (plus - minus) / (2.0 * h);
        }
        j
    }

    #[test]
    fn doppler_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let x = random_state(&mut rng);
            let gyro = rand_vec(&mut rng, 1.0);
            let pt = RadarPoint::from_cartesian(&rand_vec(&mut rng, 50.0), 1.0, 10.0);
            let a = doppler_residual(&pt, &x, &gyro, &noise(), true).jacobian;
            let num = numeric_doppler_jacobian(&pt, &x, &gyro);
            assert!(rel_err(&a, &num) < 1e-4, "{}", rel_err(&a, &num));
            let frozen = doppler_residual(&pt, &x, &gyro, &noise(), false).jacobian;
            assert!(frozen.columns(idx::EXT_ROT, 6).iter().all(|v| *v == 0.0));
            assert!(frozen.columns(idx::POS, 3).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn doppler_invariant_to_translation_and_variance_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let x = random_state(&mut rng);
            let moved = NavState { position: x.position + rand_vec(&mut rng, 100.0), ..x };
            let gyro = rand_vec(&mut rng, 1.0);
            let pt = RadarPoint::from_cartesian(&rand_vec(&mut rng, 50.0), rng.random_range(-3.0..3.0), 10.0);
            let a = doppler_residual(&pt, &x, &gyro, &noise(), false);
            let b = doppler_residual(&pt, &moved, &gyro, &noise(), false);
            assert_eq!(a, b);
            assert!(a.variance >= noise().sigma_doppler.powi(2));
        }
    }

    fn consistent_scan(x: &NavState, gyro: &Vector3<f64>, rng: &mut impl Rng, n: usize) -> RadarScan {
        let v_r = radar_velocity(x, gyro);
        let points = (0..n)
            .map(|_| {
                let p = rand_vec(rng, 40.0) + Vector3::new(50.0, 0.0, 0.0);
                let d = p.normalize();
                RadarPoint::from_cartesian(&p, d.dot(&v_r), 10.0)
            })
            .collect();
        RadarScan { time: 0.0, points }
    }

    #[test]
    fn gating_keeps_static_and_rejects_offset_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_state(&mut rng);
        let gyro = rand_vec(&mut rng, 0.3);
        let p = ErrorCovariance::identity() * 1e-6;
        let mut scan = consistent_scan(&x, &gyro, &mut rng, 100);
        let all = gate_doppler(&scan, &x, &p, &gyro, &noise(), false, ExecPolicy::Parallel);
        assert_eq!(all.inliers.len(), 100);
        scan.points[17].doppler += 10.0 * 0.1 + 10.0 * 0.1;
        let one = gate_doppler(&scan, &x, &p, &gyro, &noise(), false, ExecPolicy::Sequential);
        assert_eq!(one.outliers, vec![17]);
        assert!(!one.update_skipped());
    }

    #[test]
    fn zero_doppler_on_moving_state_skips_update() {
        let x = NavState { velocity: Vector3::new(10.0, 3.0, -1.0), ..NavState::default() };
        let points = (0..50)
            .map(|i| RadarPoint::new(20.0 + i as f64, -0.5 + 0.02 * i as f64, 0.1, 0.0, 10.0))
            .collect();
        let gate = gate_doppler(&RadarScan { time: 0.0, points }, &x, &(ErrorCovariance::identity() * 1e-4), &Vector3::zeros(), &noise(), false, ExecPolicy::Parallel);
        assert!(gate.update_skipped());
        let out = doppler_update(&x, &ErrorCovariance::identity(), &gate, &UpdateConfig::default()).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn gating_monotone_in_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_state(&mut rng);
        let gyro = rand_vec(&mut rng, 0.3);
        let mut scan = consistent_scan(&x, &gyro, &mut rng, 200);
        for pt in scan.points.iter_mut() {
            pt.doppler += rng.random_range(-1.0..1.0);
        }
        let p = ErrorCovariance::identity() * 1e-4;
        let wide = gate_doppler(&scan, &x, &p, &gyro, &noise(), false, ExecPolicy::Parallel);
        let narrow_noise = RadarNoiseParams { sigma_doppler: 0.05, sigma_azimuth: 0.004, ..noise() };
        let narrow = gate_doppler(&scan, &x, &p, &gyro, &narrow_noise, false, ExecPolicy::Parallel);
        for i in &narrow.inliers {
            assert!(wide.inliers.contains(i));
        }
    }

    fn exact_scan(v: &Vector3<f64>, rng: &mut impl Rng, n: usize) -> RadarScan {
        let points = (0..n)
            .map(|_| {
                let p = rand_vec(rng, 30.0) + Vector3::new(40.0, 0.0, 0.0);
                RadarPoint::from_cartesian(&p, p.normalize().dot(v), 10.0)
            })
            .collect();
        RadarScan { time: 0.0, points }
    }

    #[test]
    fn ransac_recovers_exact_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let v = Vector3::new(1.0, -2.0, 0.5);
        let scan = exact_scan(&v, &mut rng, 30);
        let est = ransac_ego_velocity(&scan, &RansacConfig::default()).unwrap();
        assert!((est.velocity - v).norm() < 1e-9);
        assert!(est.inliers.iter().all(|b| *b));
    }

    #[test]
    fn ransac_zero_doppler_gives_zero_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scan = exact_scan(&Vector3::zeros(), &mut rng, 20);
        let est = ransac_ego_velocity(&scan, &RansacConfig::default()).unwrap();
        assert!(est.velocity.norm() < 1e-12);
    }

    #[test]
    fn ransac_excludes_corrupted_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let v = Vector3::new(1.0, -2.0, 0.5);
        let mut scan = exact_scan(&v, &mut rng, 35);
        for (k, pt) in scan.points.iter_mut().skip(30).enumerate() {
            pt.doppler += if k % 2 == 0 { 5.0 } else { -5.0 };
        }
        let est = ransac_ego_velocity(&scan, &RansacConfig::default()).unwrap();
        assert!((est.velocity - v).norm() < 1e-6);
        assert!(est.inliers[..30].iter().all(|b| *b));
        assert!(est.inliers[30..].iter().all(|b| !*b));
    }

    #[test]
    fn ransac_rejects_degenerate_geometry() {
        let points = (0..10).map(|i| RadarPoint::new(10.0 + i as f64, 0.3, 0.1, 1.0, 5.0)).collect();
        let err = ransac_ego_velocity(&RadarScan { time: 0.0, points }, &RansacConfig::default());
        assert!(matches!(err, Err(Error::Degenerate(_))));
        let two = RadarScan { time: 0.0, points: vec![RadarPoint::new(1.0, 0.0, 0.0, 0.0, 0.0); 2] };
        assert!(ransac_ego_velocity(&two, &RansacConfig::default()).is_err());
    }
}
