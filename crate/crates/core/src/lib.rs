//! Tightly-coupled 4D radar-inertial navigation.
//!
//! An error-state Kalman filter driven by a strapdown IMU backbone is updated
//! with per-point radar Doppler residuals and with point-to-distribution scan
//! matching against an incremental local map. When a prior map is available,
//! multi-frame keyframes are matched against it at low rate to bound drift.
//!
//! The crate also ships a deterministic synthetic-flight simulator, a
//! line-oriented dataset format, trajectory metrics and the `rinav` CLI.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ins;
pub mod kdtree;
pub mod localizer;
pub mod manifold;
pub mod matcher;
pub mod par;
pub mod pipeline;
pub mod radar;
pub mod sim;
pub mod timing;
pub mod update;

pub use error::{Error, Result};
pub use ins::{ErrorCovariance, ImuNoiseParams, ImuSample, NavState, ERROR_DIM};
pub use manifold::{Direction, Rotation};
pub use par::ExecPolicy;
pub use radar::{RadarNoiseParams, RadarPoint, RadarScan};
