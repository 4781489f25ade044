//! Strapdown propagation, error-state covariance propagation, injection and
//! filter initialization.
//!
//! The error state is ordered `(dθ, dp, dv, dbg, dba, dθ_ext, dt_ext)` and the
//! attitude errors are right-multiplicative: `R = R̂ · Exp(dθ)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, right_jacobian, skew, Rotation};

pub const ERROR_DIM: usize = 21;
/// Number of IMU noise inputs: gyro white, accel white, gyro walk, accel walk.
pub const NOISE_DIM: usize = 12;

/// Offsets of each block inside the error vector.
pub mod idx {
    pub const ATT: usize = 0;
    pub const POS: usize = 3;
    pub const VEL: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
    pub const EXT_ROT: usize = 15;
    pub const EXT_POS: usize = 18;
}

pub type ErrorVector = SVector<f64, ERROR_DIM>;
pub type ErrorCovariance = SMatrix<f64, ERROR_DIM, ERROR_DIM>;
pub type TransitionMatrix = SMatrix<f64, ERROR_DIM, ERROR_DIM>;
pub type NoiseJacobian = SMatrix<f64, ERROR_DIM, NOISE_DIM>;

/// Largest accepted propagation step, seconds.
pub const MAX_STEP: f64 = 0.1;
/// Accelerometer range guard, m/s^2.
pub const MAX_SPECIFIC_FORCE: f64 = 320.0;

/// Nominal navigation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    /// World-from-IMU attitude.
    pub attitude: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    /// IMU-from-radar rotation.
    pub ext_rotation: Rotation,
    /// Radar origin expressed in the IMU frame.
    pub ext_translation: Vector3<f64>,
    pub time: f64,
}

impl Default for NavState {
    fn default() -> Self {
        NavState {
            attitude: Rotation::identity(),
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            ext_rotation: Rotation::identity(),
            ext_translation: Vector3::zeros(),
            time: 0.0,
        }
    }
}

impl NavState {
    /// `self ⊞ dx`. Rotations are re-orthonormalized after composition.
    pub fn boxplus(&self, dx: &ErrorVector) -> NavState {
        let block = |i: usize| Vector3::new(dx[i], dx[i + 1], dx[i + 2]);
        NavState {
            attitude: (self.attitude * exp_so3(&block(idx::ATT))).renormalized(),
            position: self.position + block(idx::POS),
            velocity: self.velocity + block(idx::VEL),
            gyro_bias: self.gyro_bias + block(idx::BG),
            accel_bias: self.accel_bias + block(idx::BA),
            ext_rotation: (self.ext_rotation * exp_so3(&block(idx::EXT_ROT))).renormalized(),
            ext_translation: self.ext_translation + block(idx::EXT_POS),
            time: self.time,
        }
    }

    /// `self ⊟ other`, the error that takes `other` to `self`.
    pub fn boxminus(&self, other: &NavState) -> ErrorVector {
        let mut dx = ErrorVector::zeros();
        let mut put = |i: usize, v: Vector3<f64>| dx.fixed_rows_mut::<3>(i).copy_from(&v);
        put(idx::ATT, (other.attitude.inverse() * self.attitude).log());
        put(idx::POS, self.position - other.position);
        put(idx::VEL, self.velocity - other.velocity);
        put(idx::BG, self.gyro_bias - other.gyro_bias);
        put(idx::BA, self.accel_bias - other.accel_bias);
        put(idx::EXT_ROT, (other.ext_rotation.inverse() * self.ext_rotation).log());
        put(idx::EXT_POS, self.ext_translation - other.ext_translation);
        dx
    }

    /// World-from-radar rotation and radar origin in the world frame.
    pub fn radar_pose(&self) -> (Rotation, Vector3<f64>) {
        (
            self.attitude * self.ext_rotation,
            self.attitude * self.ext_translation + self.position,
        )
    }
}

/// One accelerometer + gyroscope reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub time: f64,
    /// Specific force, m/s^2.
    pub accel: Vector3<f64>,
    /// Angular rate, rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(time: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        ImuSample { time, accel, gyro }
    }

    pub fn is_valid(&self) -> bool {
        self.time.is_finite()
            && self.accel.iter().chain(self.gyro.iter()).all(|v| v.is_finite())
            && self.accel.norm() < MAX_SPECIFIC_FORCE
    }
}

/// Continuous-time IMU noise densities and the gravity vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseParams {
    /// rad/s/√Hz
    pub gyro_noise: f64,
    /// m/s²/√Hz
    pub accel_noise: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
    pub gravity: Vector3<f64>,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        ImuNoiseParams {
            gyro_noise: 2e-4,
            accel_noise: 2e-3,
            gyro_bias_walk: 2e-5,
            accel_bias_walk: 2e-4,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

impl ImuNoiseParams {
    pub fn validate(&self) -> Result<()> {
        let d = [self.gyro_noise, self.accel_noise, self.gyro_bias_walk, self.accel_bias_walk];
        if d.iter().all(|v| *v > 0.0 && v.is_finite()) && self.gravity.norm() > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("IMU noise densities must be positive".into()))
        }
    }

    /// Discrete noise covariance for a step of `dt` seconds, matching the
    /// columns of [`transition_jacobians`]' noise Jacobian.
    pub fn discrete_covariance(&self, dt: f64) -> SVector<f64, NOISE_DIM> {
        let mut q = SVector::<f64, NOISE_DIM>::zeros();
        let vals = [
            self.gyro_noise.powi(2) / dt,
            self.accel_noise.powi(2) / dt,
            self.gyro_bias_walk.powi(2) * dt,
            self.accel_bias_walk.powi(2) * dt,
        ];
        for (b, v) in vals.iter().enumerate() {
            q.fixed_rows_mut::<3>(3 * b).fill(*v);
        }
        q
    }
}

fn check_step(dt: f64) -> Result<()> {
    if dt > 0.0 && dt <= MAX_STEP {
        Ok(())
    } else {
        Err(Error::InvalidStep(dt))
    }
}

/// Strapdown step with the sample held constant over `dt`.
pub fn propagate_nominal(x: &NavState, u: &ImuSample, dt: f64, gravity: &Vector3<f64>) -> Result<NavState> {
    check_step(dt)?;
    Ok(step(x, &u.accel, &u.gyro, dt, gravity))
}

/// Propagates to absolute time `t`, rejecting non-increasing timestamps.
pub fn propagate_to(x: &NavState, u: &ImuSample, t: f64, gravity: &Vector3<f64>) -> Result<NavState> {
    if t <= x.time {
        return Err(Error::NonIncreasingTime { current: x.time, next: t });
    }
    propagate_nominal(x, u, t - x.time, gravity)
}

fn step(x: &NavState, accel: &Vector3<f64>, gyro: &Vector3<f64>, dt: f64, g: &Vector3<f64>) -> NavState {
    let w = gyro - x.gyro_bias;
    let a_world = x.attitude * (accel - x.accel_bias);
    NavState {
        attitude: x.attitude * exp_so3(&(w * dt)),
        position: x.position + x.velocity * dt + (a_world + g) * (0.5 * dt * dt),
        velocity: x.velocity + (a_world + g) * dt,
        time: x.time + dt,
        ..*x
    }
}

/// Discrete error-state transition `F` and noise Jacobian `G` for one step.
pub fn transition_jacobians(x: &NavState, u: &ImuSample, dt: f64) -> (TransitionMatrix, NoiseJacobian) {
    use idx::*;
    let w_dt = (u.gyro - x.gyro_bias) * dt;
    let a = u.accel - x.accel_bias;
    let r = *x.attitude.matrix();
    let jr = right_jacobian(&w_dt);
    let ra_skew = r * skew(&a);
    let i3 = Matrix3::identity();

    let mut f = TransitionMatrix::identity();
    let set = |m: &mut TransitionMatrix, row: usize, col: usize, v: Matrix3<f64>| {
        m.fixed_view_mut::<3, 3>(row, col).copy_from(&v);
    };
    set(&mut f, ATT, ATT, *exp_so3(&(-w_dt)).matrix());
    set(&mut f, ATT, BG, -jr * dt);
    set(&mut f, POS, ATT, -ra_skew * (0.5 * dt * dt));
    set(&mut f, POS, VEL, i3 * dt);
    set(&mut f, POS, BA, -r * (0.5 * dt * dt));
    set(&mut f, VEL, ATT, -ra_skew * dt);
    set(&mut f, VEL, BA, -r * dt);

    let mut g = NoiseJacobian::zeros();
    g.fixed_view_mut::<3, 3>(ATT, 0).copy_from(&(-jr * dt));
    g.fixed_view_mut::<3, 3>(POS, 3).copy_from(&(-r * (0.5 * dt * dt)));
    g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&(-r * dt));
    g.fixed_view_mut::<3, 3>(BG, 6).copy_from(&i3);
    g.fixed_view_mut::<3, 3>(BA, 9).copy_from(&i3);
    (f, g)
}

/// `P ← F P Fᵀ + G Q Gᵀ`, symmetrized.
pub fn propagate_covariance(
    p: &ErrorCovariance,
    x: &NavState,
    u: &ImuSample,
    dt: f64,
    q: &ImuNoiseParams,
) -> ErrorCovariance {
    let (f, g) = transition_jacobians(x, u, dt);
    let qd = q.discrete_covariance(dt);
    let gq = g * SMatrix::<f64, NOISE_DIM, NOISE_DIM>::from_diagonal(&qd);
    symmetrize(&(f * p * f.transpose() + gq * g.transpose()))
}

pub fn symmetrize(p: &ErrorCovariance) -> ErrorCovariance {
    (p + p.transpose()) * 0.5
}

/// Applies a correction and symmetrizes the covariance.
pub fn inject_and_reset(x: &NavState, p: &ErrorCovariance, dx: &ErrorVector) -> (NavState, ErrorCovariance) {
    (x.boxplus(dx), symmetrize(p))
}

/// External position + heading used to anchor initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalPose {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

/// Initial standard deviations, extrinsics and static-detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub gravity: Vector3<f64>,
    pub min_static_samples: usize,
    /// Allowed relative deviation of mean specific force from |g|.
    pub gravity_tolerance: f64,
    pub sigma_tilt: f64,
    pub sigma_yaw: f64,
    pub sigma_position: f64,
    pub sigma_velocity: f64,
    pub sigma_gyro_bias: f64,
    pub sigma_accel_bias: f64,
    pub sigma_ext_rotation: f64,
    pub sigma_ext_translation: f64,
    pub ext_rotation: Rotation,
    pub ext_translation: Vector3<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            gravity: Vector3::new(0.0, 0.0, -9.81),
            min_static_samples: 50,
            gravity_tolerance: 0.2,
            sigma_tilt: 0.02,
            sigma_yaw: 0.01,
            sigma_position: 0.1,
            sigma_velocity: 0.1,
            sigma_gyro_bias: 5e-3,
            sigma_accel_bias: 0.1,
            sigma_ext_rotation: 1e-4,
            sigma_ext_translation: 1e-3,
            ext_rotation: Rotation::identity(),
            ext_translation: Vector3::zeros(),
        }
    }
}

/// Roll and pitch that rotate the mean specific force onto `-g`.
///
/// Gravity must lie along the world z axis (either sign).
pub fn level_from_specific_force(mean_accel: &Vector3<f64>, gravity: &Vector3<f64>) -> Result<(f64, f64)> {
    let gn = gravity.norm();
    if gn == 0.0 || (gravity.x.abs() + gravity.y.abs()) > 1e-9 * gn {
        return Err(Error::Config("gravity must be along the world z axis".into()));
    }
    let f = mean_accel * (-gravity.z.signum());
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2(f.y.hypot(f.z));
    Ok((roll, pitch))
}

/// Builds the initial state from a static IMU window.
///
/// `radar_velocity` is the ego-velocity of the radar expressed in the radar
/// frame, as returned by RANSAC on the first scan.
pub fn initialize(
    static_imu: &[ImuSample],
    radar_velocity: Option<Vector3<f64>>,
    external_pose: Option<ExternalPose>,
    cfg: &InitConfig,
) -> Result<(NavState, ErrorCovariance)> {
    if static_imu.len() < cfg.min_static_samples {
        return Err(Error::TooFewSamples { got: static_imu.len(), need: cfg.min_static_samples });
    }
    let n = static_imu.len() as f64;
    let mean_accel = static_imu.iter().map(|s| s.accel).sum::<Vector3<f64>>() / n;
    let mean_gyro = static_imu.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / n;
    let g = cfg.gravity.norm();
    if (mean_accel.norm() - g).abs() > cfg.gravity_tolerance * g {
        return Err(Error::NotStatic { norm: mean_accel.norm(), gravity: g });
    }
    let (roll, pitch) = level_from_specific_force(&mean_accel, &cfg.gravity)?;
    let (yaw, position) = external_pose.map_or((0.0, Vector3::zeros()), |p| (p.yaw, p.position));
    let attitude = Rotation::from_euler(roll, pitch, yaw);

    let velocity = radar_velocity.map_or_else(Vector3::zeros, |v_r| {
        let body = cfg.ext_rotation * v_r - skew(&mean_gyro) * cfg.ext_translation;
        attitude * body
    });

    let state = NavState {
        attitude,
        position,
        velocity,
        ext_rotation: cfg.ext_rotation,
        ext_translation: cfg.ext_translation,
        time: static_imu.last().map_or(0.0, |s| s.time),
        ..NavState::default()
    };

    let mut diag = ErrorVector::zeros();
    let mut fill = |i: usize, sigma: f64| diag.fixed_rows_mut::<3>(i).fill(sigma * sigma);
    fill(idx::ATT, cfg.sigma_tilt);
    fill(idx::POS, cfg.sigma_position);
    fill(idx::VEL, cfg.sigma_velocity);
    fill(idx::BG, cfg.sigma_gyro_bias);
    fill(idx::BA, cfg.sigma_accel_bias);
    fill(idx::EXT_ROT, cfg.sigma_ext_rotation);
    fill(idx::EXT_POS, cfg.sigma_ext_translation);
    diag[idx::ATT + 2] = cfg.sigma_yaw * cfg.sigma_yaw;
    Ok((state, ErrorCovariance::from_diagonal(&diag)))
}
