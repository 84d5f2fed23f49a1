//! Two-procedure baseline: coarse alignment over a warm-up window, then a
//! 12-state error-state Kalman filter driven by zero-velocity measurements.
//!
//! State order is `[φ, δv, ε, ∇]`: misalignment in the navigation frame
//! (`C_true = exp([φ]×)·C_computed`), velocity error, gyro bias and
//! accelerometer bias.

use crate::coarse::{CoarseAligner, CoarseError, DEFAULT_PAIR_INTERVAL};
use crate::rotation::{
    gravity_n, orthonormalize, rad_per_s_from_deg_per_hour, skew, so3_exp, EarthParams, RotationMatrix, Vector3,
};
use crate::sim::{offset_heading, ImuSample, MILLI_G};
use nalgebra::{Matrix3, SMatrix, SVector};
use thiserror::Error;

pub type KfVector = SVector<f64, 12>;
pub type KfMatrix = SMatrix<f64, 12, 12>;
type Gain = SMatrix<f64, 12, 3>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KfError {
    #[error("coarse window {window} s must be shorter than the {duration} s stream")]
    WindowTooLong { window: f64, duration: f64 },
    #[error("coarse stage failed at hand-over (t = {t} s): {source}")]
    Coarse {
        t: f64,
        #[source]
        source: CoarseError,
    },
    #[error("innovation covariance is not invertible")]
    SingularInnovation,
    #[error("sample at t = {t} s is not finite")]
    NonFiniteSample { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub x: KfVector,
    pub p: KfMatrix,
}

impl KfState {
    pub fn phi(&self) -> Vector3 {
        self.x.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity_error(&self) -> Vector3 {
        self.x.fixed_rows::<3>(3).into_owned()
    }

    pub fn gyro_bias(&self) -> Vector3 {
        self.x.fixed_rows::<3>(6).into_owned()
    }

    pub fn accel_bias(&self) -> Vector3 {
        self.x.fixed_rows::<3>(9).into_owned()
    }
}

/// White-noise densities driving the error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    /// rad/√s
    pub gyro_arw: f64,
    /// (m/s)/√s
    pub accel_vrw: f64,
    /// Bias random-walk densities; zero models constant biases.
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
}

impl ProcessNoise {
    /// Continuous-time spectral density diagonal.
    pub fn density(&self) -> KfVector {
        let mut q = KfVector::zeros();
        for i in 0..3 {
            q[i] = self.gyro_arw * self.gyro_arw;
            q[3 + i] = self.accel_vrw * self.accel_vrw;
            q[6 + i] = self.gyro_bias_walk * self.gyro_bias_walk;
            q[9 + i] = self.accel_bias_walk * self.accel_bias_walk;
        }
        q
    }
}

/// Initial 1σ uncertainties at hand-over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialUncertainty {
    pub tilt: f64,
    pub heading: f64,
    pub velocity: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            tilt: 1f64.to_radians(),
            heading: 10f64.to_radians(),
            velocity: 0.1,
            gyro_bias: rad_per_s_from_deg_per_hour(10.0),
            accel_bias: MILLI_G,
        }
    }
}

impl InitialUncertainty {
    pub fn covariance(&self) -> KfMatrix {
        let d = KfVector::from_column_slice(&[
            self.tilt,
            self.tilt,
            self.heading,
            self.velocity,
            self.velocity,
            self.velocity,
            self.gyro_bias,
            self.gyro_bias,
            self.gyro_bias,
            self.accel_bias,
            self.accel_bias,
            self.accel_bias,
        ]);
        KfMatrix::from_diagonal(&d.component_mul(&d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfConfig {
    /// Length of the coarse stage, s.
    pub coarse_window: f64,
    pub pair_interval: f64,
    /// Spacing of emitted attitude epochs after hand-over, s.
    pub output_interval: f64,
    /// Zero-velocity measurement standard deviation, m/s.
    pub velocity_sigma: f64,
    pub noise: ProcessNoise,
    pub initial: InitialUncertainty,
    /// Heading offset added to the coarse attitude at hand-over, degrees.
    pub initial_heading_error_deg: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            coarse_window: 120.0,
            pair_interval: DEFAULT_PAIR_INTERVAL,
            output_interval: 1.0,
            velocity_sigma: 0.01,
            noise: ProcessNoise {
                gyro_arw: 0.1f64.to_radians() / 60.0,
                accel_vrw: 50e-6 * crate::rotation::STANDARD_GRAVITY,
                gyro_bias_walk: 0.0,
                accel_bias_walk: 0.0,
            },
            initial: InitialUncertainty::default(),
            initial_heading_error_deg: 0.0,
        }
    }
}

/// Continuous stationary-base error model `ẋ = F·x`:
///
/// ```text
/// φ̇  = −[ω_ie^n]×·φ − C_b^n·ε
/// δv̇ = [f^n]×·φ + C_b^n·∇
/// ```
pub fn error_dynamics(c_b_n: &RotationMatrix, f_b: &Vector3, p: &EarthParams) -> KfMatrix {
    let c = c_b_n.matrix();
    let f_n = c_b_n * f_b;
    let mut f = KfMatrix::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p.earth_rate_n())));
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-c));
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&f_n));
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(c);
    f
}

/// `Φ = I + F·dt + F²·dt²/2`.
pub fn transition_matrix(c_b_n: &RotationMatrix, f_b: &Vector3, p: &EarthParams, dt: f64) -> KfMatrix {
    let f_dt = error_dynamics(c_b_n, f_b, p) * dt;
    KfMatrix::identity() + f_dt + f_dt * f_dt * 0.5
}

pub fn kf_predict(s: &KfState, c_b_n: &RotationMatrix, f_b: &Vector3, p: &EarthParams, noise: &ProcessNoise, dt: f64) -> KfState {
    let phi = transition_matrix(c_b_n, f_b, p, dt);
    let q = KfMatrix::from_diagonal(&(noise.density() * dt));
    let p_next = phi * s.p * phi.transpose() + q;
    KfState { x: phi * s.x, p: symmetrize(&p_next) }
}

/// Zero-velocity update with `z` the observed velocity error and `H = [0 I 0 0]`.
pub fn kf_update(s: &KfState, z: &Vector3, velocity_sigma: f64) -> Result<KfState, KfError> {
    let r = Matrix3::from_diagonal_element(velocity_sigma * velocity_sigma);
    let ph_t: Gain = s.p.fixed_columns::<3>(3).into_owned();
    let innovation_cov = ph_t.fixed_rows::<3>(3).into_owned() + r;
    let inv = innovation_cov.try_inverse().ok_or(KfError::SingularInnovation)?;
    let k: Gain = ph_t * inv;
    let innovation = z - s.velocity_error();
    let x = s.x + k * innovation;

    // Joseph form: (I − KH)·P·(I − KH)ᵀ + K·R·Kᵀ.
    let mut i_kh = KfMatrix::identity();
    let mut block = i_kh.fixed_view_mut::<12, 3>(0, 3);
    block -= k;
    let p = i_kh * s.p * i_kh.transpose() + k * r * k.transpose();
    Ok(KfState { x, p: symmetrize(&p) })
}

fn symmetrize(p: &KfMatrix) -> KfMatrix {
    (p + p.transpose()) * 0.5
}

/// Strapdown state of the computed solution on a stationary base.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Mechanization {
    c_b_n: RotationMatrix,
    velocity: Vector3,
}

impl Mechanization {
    fn step(&mut self, sample: &ImuSample, p: &EarthParams, dt: f64) {
        let earth = so3_exp(&(-p.earth_rate_n() * dt));
        self.c_b_n = earth * self.c_b_n * so3_exp(&(sample.gyro * dt));
        // Specific force is sampled at the end of the step.
        let f_n = self.c_b_n * sample.accel;
        self.velocity += (f_n + gravity_n(p)) * dt;
    }

    /// Folds the misalignment and velocity error back into the solution.
    fn correct(&mut self, s: &mut KfState) {
        self.c_b_n = so3_exp(&s.phi()) * self.c_b_n;
        self.velocity -= s.velocity_error();
        s.x.fixed_rows_mut::<6>(0).fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfEpoch {
    pub t: f64,
    /// `None` while the coarse stage has no observable solution yet.
    pub c_b_n: Option<RotationMatrix>,
    pub gyro_bias: Vector3,
    pub accel_bias: Vector3,
}

#[derive(Debug, Clone)]
pub struct KfRun {
    /// Coarse epochs up to hand-over, then filter epochs.
    pub epochs: Vec<KfEpoch>,
    pub handover_t: f64,
    pub final_state: KfState,
}

/// Coarse alignment for `cfg.coarse_window` seconds, then closed-loop
/// filtering to the end of the stream.
pub fn run_two_procedure(samples: &[ImuSample], p: &EarthParams, cfg: &KfConfig) -> Result<KfRun, KfError> {
    let duration = samples.last().map(|s| s.t).unwrap_or(0.0);
    if !(cfg.coarse_window < duration) {
        return Err(KfError::WindowTooLong { window: cfg.coarse_window, duration });
    }

    let mut coarse = CoarseAligner::new(*p, cfg.pair_interval);
    let mut epochs = Vec::new();
    let mut split = samples.len();
    for (i, s) in samples.iter().enumerate() {
        let to_coarse = |e: CoarseError| KfError::Coarse { t: s.t, source: e };
        if let Some(e) = coarse.push(s).map_err(to_coarse)? {
            epochs.push(KfEpoch { t: e.t, c_b_n: e.c_b_n, gyro_bias: Vector3::zeros(), accel_bias: Vector3::zeros() });
        }
        if s.t + 1e-9 >= cfg.coarse_window {
            split = i + 1;
            break;
        }
    }
    let handover_t = coarse.state().t;
    let solution = coarse.solve().map_err(|e| KfError::Coarse { t: handover_t, source: e })?;
    let coarse_attitude = coarse.attitude(&solution.rotation);

    let mut nav = Mechanization {
        c_b_n: offset_heading(&coarse_attitude, cfg.initial_heading_error_deg),
        velocity: Vector3::zeros(),
    };
    let mut state = KfState { x: KfVector::zeros(), p: cfg.initial.covariance() };
    let mut t = handover_t;
    let mut next_output = handover_t + cfg.output_interval;
    let mut steps = 0u64;
    for s in &samples[split..] {
        if !s.is_finite() {
            return Err(KfError::NonFiniteSample { t: s.t });
        }
        let dt = s.t - t;
        t = s.t;
        nav.step(s, p, dt);
        state = kf_predict(&state, &nav.c_b_n, &s.accel, p, &cfg.noise, dt);
        state = kf_update(&state, &nav.velocity, cfg.velocity_sigma)?;
        nav.correct(&mut state);
        steps += 1;
        if steps.is_multiple_of(crate::coarse::REORTHONORMALIZE_EVERY) {
            nav.c_b_n = orthonormalize(nav.c_b_n.matrix()).unwrap_or(nav.c_b_n);
        }
        if t + 1e-9 >= next_output {
            next_output += cfg.output_interval;
            epochs.push(KfEpoch { t, c_b_n: Some(nav.c_b_n), gyro_bias: state.gyro_bias(), accel_bias: state.accel_bias() });
        }
    }
    Ok(KfRun { epochs, handover_t, final_state: state })
}
