//! Deterministic IMU simulator for moored self-alignment with rotation
//! modulation.
//!
//! The vessel is stationary in the navigation frame apart from a turntable
//! spinning the IMU about its body z axis and an optional horizontal sway.
//! Gyro samples are delta-angle rates: sample `k` is the constant rate that
//! carries the true `C_b^{ib0}` exactly from `t_{k-1}` to `t_k` in one
//! Rodrigues step. Accelerometer samples are the instantaneous specific force
//! at `t_k`.

use crate::rotation::{
    earth_rotation_dcm, gravity_n, heading_deg, heading_pitch_roll_to_dcm, rot_z, so3_exp, so3_log,
    EarthParams, EulerAngles, RotationMatrix, Vector3, STANDARD_GRAVITY,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

/// 1 mg in m/s².
pub const MILLI_G: f64 = 1e-3 * STANDARD_GRAVITY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("time {t} s outside ground truth range [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },
}

/// One timestamped IMU measurement in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate, rad/s.
    pub gyro: Vector3,
    /// Specific force, m/s².
    pub accel: Vector3,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().all(|v| v.is_finite()) && self.accel.iter().all(|v| v.is_finite())
    }
}

/// Scenario parameters, SI units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub imu_rate: f64,
    pub earth: EarthParams,
    /// True `C_b^n` at `t = 0`.
    pub initial_attitude: RotationMatrix,
    /// Heading offset handed to recursive estimators as their starting error, degrees.
    pub initial_heading_error_deg: f64,
    /// Turntable rate about body z, rad/s.
    pub turntable_rate: f64,
    /// Time between turntable direction reversals, s; `0` rotates continuously.
    pub turntable_reversal_period: f64,
    pub gyro_bias: Vector3,
    pub accel_bias: Vector3,
    /// Angular random walk, rad/√s.
    pub gyro_arw: f64,
    /// Velocity random walk, (m/s)/√s.
    pub accel_vrw: f64,
    pub sway_accel_amp: f64,
    pub sway_period: f64,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Moored scenario with the reference biases, tactical-grade gyro noise and
    /// 6 °/s rotation modulation reversing after every full turn.
    pub fn reference() -> Self {
        Self {
            duration: 900.0,
            imu_rate: 100.0,
            earth: EarthParams::from_latitude_deg(45.0),
            initial_attitude: heading_pitch_roll_to_dcm(&EulerAngles { heading: 30.0, pitch: 1.0, roll: -0.5 }),
            initial_heading_error_deg: 0.0,
            turntable_rate: 6f64.to_radians(),
            turntable_reversal_period: 60.0,
            gyro_bias: Vector3::new(-8.0, 6.0, -7.0) * (PI / 180.0 / 3600.0),
            accel_bias: Vector3::new(1.0, -1.0, 1.0) * MILLI_G,
            gyro_arw: 0.1f64.to_radians() / 60.0,
            accel_vrw: 50e-6 * STANDARD_GRAVITY,
            sway_accel_amp: 0.0,
            sway_period: 8.0,
            rng_seed: 1,
        }
    }

    /// Same motion with every sensor error switched off.
    pub fn noise_free() -> Self {
        Self {
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gyro_arw: 0.0,
            accel_vrw: 0.0,
            ..Self::reference()
        }
    }

    /// Turntable angle at `t`, rad.
    pub fn table_angle(&self, t: f64) -> f64 {
        let p = self.turntable_reversal_period;
        if p > 0.0 {
            self.turntable_rate * (p - ((t % (2.0 * p)) - p).abs())
        } else {
            self.turntable_rate * t
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        if !(self.duration > 0.0) {
            problems.push("duration must be > 0".to_string());
        }
        if !(self.imu_rate > 0.0) {
            problems.push("imu_rate must be > 0".to_string());
        }
        if self.sway_accel_amp > 0.0 && !(self.sway_period > 0.0) {
            problems.push("sway_period must be > 0 when sway is enabled".to_string());
        }
        if self.gyro_arw < 0.0 || self.accel_vrw < 0.0 {
            problems.push("noise densities must be ≥ 0".to_string());
        }
        if self.earth.latitude.abs() > PI / 2.0 {
            problems.push("|latitude| must be ≤ 90°".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Horizontal sway acceleration in the navigation frame.
    pub fn sway_accel(&self, t: f64) -> Vector3 {
        if self.sway_accel_amp == 0.0 {
            return Vector3::zeros();
        }
        let a = self.sway_accel_amp * (2.0 * PI * t / self.sway_period).sin();
        Vector3::new(a, 0.0, 0.0)
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Time-indexed true attitude plus the injected sensor biases.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub dt: f64,
    pub earth: EarthParams,
    /// True `C_b^n` at `t = k·dt`, `k = 0..=N`.
    pub attitude: Vec<RotationMatrix>,
    pub gyro_bias: Vector3,
    pub accel_bias: Vector3,
}

impl GroundTruth {
    pub fn duration(&self) -> f64 {
        (self.attitude.len() - 1) as f64 * self.dt
    }

    pub fn index_at(&self, t: f64) -> Result<usize, SimError> {
        let duration = self.duration();
        if !(t >= -1e-9 && t <= duration + 1e-9) {
            return Err(SimError::OutOfRange { t, duration });
        }
        Ok(((t / self.dt).round() as usize).min(self.attitude.len() - 1))
    }

    pub fn c_b_n(&self, t: f64) -> Result<RotationMatrix, SimError> {
        Ok(self.attitude[self.index_at(t)?])
    }

    /// True `C_b^{ib0}` at ground-truth index `k`.
    pub fn c_b_ib0(&self, k: usize) -> RotationMatrix {
        self.attitude[0].inverse() * earth_rotation_dcm(&self.earth, k as f64 * self.dt) * self.attitude[k]
    }

    /// True `C_{ib0}^{in0}`, the constant initial attitude.
    pub fn c_ib0_in0(&self) -> RotationMatrix {
        self.attitude[0]
    }
}

/// Heading of the true attitude nearest to `t`, degrees.
pub fn true_heading_deg(gt: &GroundTruth, t: f64) -> Result<f64, SimError> {
    Ok(heading_deg(&gt.c_b_n(t)?))
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub samples: Vec<ImuSample>,
    pub truth: GroundTruth,
}

/// Generates the IMU stream and ground truth for a scenario.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let n = cfg.sample_count();
    let dt = cfg.dt();
    let c0 = cfg.initial_attitude;
    let g_n = gravity_n(&cfg.earth);

    // Earth rotation over one sample interval, seen from the initial body frame.
    let earth_step_b0 = c0.inverse() * earth_rotation_dcm(&cfg.earth, dt) * c0;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    let gyro_sigma = cfg.gyro_arw * cfg.imu_rate.sqrt();
    let accel_sigma = cfg.accel_vrw * cfg.imu_rate.sqrt();
    let mut noise = |sigma: f64| -> Vector3 {
        if sigma == 0.0 {
            return Vector3::zeros();
        }
        let x: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        Vector3::new(x, y, z) * sigma
    };

    let mut attitude = Vec::with_capacity(n + 1);
    attitude.push(c0);
    let mut samples = Vec::with_capacity(n);
    for k in 1..=n {
        let t_prev = (k - 1) as f64 * dt;
        let t = k as f64 * dt;
        let (angle_prev, angle) = (cfg.table_angle(t_prev), cfg.table_angle(t));
        let table_prev = rot_z(angle_prev);
        let increment = table_prev.inverse() * earth_step_b0 * table_prev * rot_z(angle - angle_prev);
        let ideal_gyro = so3_log(&increment) / dt;

        let c_b_n = c0 * rot_z(angle);
        let ideal_accel = c_b_n.inverse() * (-g_n + cfg.sway_accel(t));

        let gyro = ideal_gyro + cfg.gyro_bias + noise(gyro_sigma);
        let accel = ideal_accel + cfg.accel_bias + noise(accel_sigma);
        samples.push(ImuSample { t, gyro, accel });
        attitude.push(c_b_n);
    }

    Ok(Simulation {
        samples,
        truth: GroundTruth {
            dt,
            earth: cfg.earth,
            attitude,
            gyro_bias: cfg.gyro_bias,
            accel_bias: cfg.accel_bias,
        },
    })
}

/// Applies a heading offset (degrees, east of north) to an attitude.
pub fn offset_heading(c_b_n: &RotationMatrix, offset_deg: f64) -> RotationMatrix {
    so3_exp(&Vector3::new(0.0, 0.0, -offset_deg.to_radians())) * c_b_n
}

pub const IMU_CSV_HEADER: &str = "t_s,gx_rad_s,gy_rad_s,gz_rad_s,ax_m_s2,ay_m_s2,az_m_s2";
pub const TRUTH_CSV_HEADER: &str = "t_s,heading_deg,pitch_deg,roll_deg";

/// Renders samples as CSV with nine significant digits per field.
pub fn samples_to_csv(samples: &[ImuSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 120);
    out.push_str(IMU_CSV_HEADER);
    out.push('\n');
    for s in samples {
        let fields = [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z];
        push_row(&mut out, &fields);
    }
    out
}

/// Renders ground-truth Euler angles as CSV (gimbal-locked rows carry NaN pitch/roll).
pub fn truth_to_csv(gt: &GroundTruth) -> String {
    let mut out = String::with_capacity(gt.attitude.len() * 50);
    out.push_str(TRUTH_CSV_HEADER);
    out.push('\n');
    for (k, c) in gt.attitude.iter().enumerate() {
        let t = k as f64 * gt.dt;
        let row = match crate::rotation::dcm_to_heading_pitch_roll(c) {
            Ok(e) => [t, e.heading, e.pitch, e.roll],
            Err(_) => [t, heading_deg(c), f64::NAN, f64::NAN],
        };
        push_row(&mut out, &row);
    }
    out
}

fn push_row(out: &mut String, fields: &[f64]) {
    for (i, v) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}", crate::format::Sig9(*v));
    }
    out.push('\n');
}
