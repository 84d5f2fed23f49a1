//! Self-alignment toolkit for strapdown inertial navigation.
//!
//! Three aligners share one deterministic IMU simulator:
//!
//! - [`coarse`]: optimization-based coarse alignment (attitude tracking plus
//!   an SVD Wahba solve).
//! - [`kf`]: the classic two-procedure baseline, coarse alignment followed by
//!   a 12-state zero-velocity Kalman filter.
//! - [`fgo`]: unified alignment by factor graph optimization over keyframe
//!   error states and the constant initial attitude.
//!
//! [`bench`] runs Monte Carlo comparisons and writes plot-ready CSV.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` rejects NaN too

pub mod bench;
pub mod coarse;
pub mod fgo;
pub mod format;
pub mod kf;
pub mod rotation;
pub mod sim;

pub use rotation::{EarthParams, EulerAngles, RotationMatrix, Vector3};
pub use sim::{simulate, GroundTruth, ImuSample, ScenarioConfig, Simulation};
