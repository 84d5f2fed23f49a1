use super::factors::NodeVector;
use super::FgoError;
use crate::coarse::{CoarseError, TrackState};
use crate::rotation::{rad_per_s_from_deg_per_hour, skew, EarthParams, RotationMatrix, Vector3};
use crate::sim::{ImuSample, MILLI_G};
use nalgebra::Matrix3;

/// Keyframe spacing, s.
pub const DEFAULT_KEYFRAME_INTERVAL: f64 = 2.0;

const INTERVAL_TOLERANCE: f64 = 1e-9;

/// Error state at one keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeState {
    /// Misalignment of the tracked initial body frame, rad.
    pub phi: Vector3,
    /// Error of the specific-force integral, m/s.
    pub delta_f: Vector3,
    /// Gyro bias, rad/s.
    pub gyro_bias: Vector3,
    /// Accelerometer bias, m/s².
    pub accel_bias: Vector3,
}

impl NodeState {
    pub fn to_vector(&self) -> NodeVector {
        let mut v = NodeVector::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.phi);
        v.fixed_rows_mut::<3>(3).copy_from(&self.delta_f);
        v.fixed_rows_mut::<3>(6).copy_from(&self.gyro_bias);
        v.fixed_rows_mut::<3>(9).copy_from(&self.accel_bias);
        v
    }

    pub fn from_vector(v: &NodeVector) -> Self {
        Self {
            phi: v.fixed_rows::<3>(0).into_owned(),
            delta_f: v.fixed_rows::<3>(3).into_owned(),
            gyro_bias: v.fixed_rows::<3>(6).into_owned(),
            accel_bias: v.fixed_rows::<3>(9).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Attitude-tracking quantities frozen at a keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeSnapshot {
    pub index: usize,
    pub t: f64,
    /// Tracked `C_b^{ĩb0}` at `t`.
    pub c_b_ib0: RotationMatrix,
    /// Specific-force integral `F̃` at `t`, m/s.
    pub f_tilde: Vector3,
    /// Gravity integral `G` at `t`, m/s.
    pub g_int: Vector3,
    /// Mean of `C_b^{ĩb0}·f̃` over the interval that follows, m/s².
    pub f_mean: Vector3,
    /// Mean of `C_b^{ĩb0}` over the interval that follows.
    pub c_mean: Matrix3<f64>,
    /// `(2/T²)·∫[C·f̃]×·(∫C ds) dt` over the interval that follows; equals
    /// `[f̄]×·C̄` when both are constant.
    pub fc_moment: Matrix3<f64>,
}

/// The constant initial attitude `C_{ib0}^{in0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAttitude(pub RotationMatrix);

/// Diagonal noise model. Variances in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub ins: NodeVector,
    pub prior: NodeVector,
    /// Measurement variance is `accel_vrw²·t + floor²` per axis.
    pub accel_vrw: f64,
    pub measurement_floor: f64,
}

impl NoiseModel {
    /// Builds the model from sensor noise densities: gyro angular random walk
    /// (rad/√s) and accelerometer velocity random walk ((m/s)/√s).
    pub fn from_densities(gyro_arw: f64, accel_vrw: f64, keyframe_interval: f64) -> Self {
        let bias_floor = 1e-16;
        let phi = gyro_arw * gyro_arw * keyframe_interval;
        let vel = accel_vrw * accel_vrw * keyframe_interval;
        let ins = NodeVector::from_column_slice(&[
            phi, phi, phi, vel, vel, vel, bias_floor, bias_floor, bias_floor, bias_floor, bias_floor, bias_floor,
        ]);
        let eps = rad_per_s_from_deg_per_hour(10.0).powi(2);
        let acc = MILLI_G * MILLI_G;
        let (p_phi, p_df) = (1e-12, 1e-8);
        let prior = NodeVector::from_column_slice(&[p_phi, p_phi, p_phi, p_df, p_df, p_df, eps, eps, eps, acc, acc, acc]);
        Self {
            ins,
            prior,
            accel_vrw,
            measurement_floor: 1e-4,
        }
    }

    pub fn measurement_variance(&self, t: f64) -> Vector3 {
        let v = self.accel_vrw * self.accel_vrw * t + self.measurement_floor * self.measurement_floor;
        Vector3::repeat(v)
    }

    pub fn validate(&self) -> Result<(), FgoError> {
        let ok = self.ins.iter().chain(self.prior.iter()).all(|v| *v > 0.0 && v.is_finite())
            && self.accel_vrw >= 0.0
            && self.measurement_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FgoError::InvalidNoise("all variances must be positive and finite".into()))
        }
    }
}

/// Chain-plus-hub factor graph over keyframes and the constant attitude.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub keyframe_interval: f64,
    pub keyframes: Vec<KeyframeSnapshot>,
    pub nodes: Vec<NodeState>,
    /// Current estimate of the constant attitude, if any.
    pub constant: Option<ConstantAttitude>,
    pub noise: NoiseModel,
    /// Mean of the prior on the first node. Zero unless the stream was
    /// pre-corrected by a bias estimate, in which case the bias rows hold
    /// minus that correction so the prior still centres the total bias on zero.
    pub prior_mean: NodeState,
}

impl FactorGraph {
    pub fn new(keyframe_interval: f64, noise: NoiseModel) -> Self {
        Self {
            keyframe_interval,
            keyframes: Vec::new(),
            nodes: Vec::new(),
            constant: None,
            noise,
            prior_mean: NodeState::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a keyframe with a zero error state.
    pub fn add_keyframe(&mut self, snap: KeyframeSnapshot) -> Result<(), FgoError> {
        let expected = self.nodes.len();
        if snap.index != expected {
            return Err(FgoError::OutOfOrder { expected, got: snap.index });
        }
        if let Some(last) = self.keyframes.last() {
            let spacing = snap.t - last.t;
            if (spacing - self.keyframe_interval).abs() > INTERVAL_TOLERANCE {
                return Err(FgoError::IntervalMismatch { expected: self.keyframe_interval, got: spacing });
            }
        }
        self.keyframes.push(snap);
        self.nodes.push(NodeState::default());
        Ok(())
    }

    pub fn ins_factor_count(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn measurement_factor_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn prior_factor_count(&self) -> usize {
        usize::from(!self.nodes.is_empty())
    }

    /// `(F̃_k, G_k)` pairs usable by the Wahba initializer (the all-zero pair at
    /// `t = 0` carries no direction and is skipped).
    pub fn wahba_pairs(&self) -> Vec<(Vector3, Vector3)> {
        self.keyframes
            .iter()
            .filter(|k| k.f_tilde.norm_squared() > 0.0 && k.g_int.norm_squared() > 0.0)
            .map(|k| (k.f_tilde, k.g_int))
            .collect()
    }
}

/// Streams IMU samples into keyframe snapshots spaced `interval` apart,
/// starting with the identity snapshot at `t = 0`.
#[derive(Debug, Clone)]
pub struct KeyframeBuilder {
    earth: EarthParams,
    interval: f64,
    track: TrackState,
    snapshots: Vec<KeyframeSnapshot>,
    sum_cf: Vector3,
    sum_c: Matrix3<f64>,
    sum_fc: Matrix3<f64>,
    count: usize,
}

impl KeyframeBuilder {
    pub fn new(earth: EarthParams, interval: f64) -> Self {
        let track = TrackState::default();
        let first = KeyframeSnapshot {
            index: 0,
            t: 0.0,
            c_b_ib0: track.c_b_ib0,
            f_tilde: Vector3::zeros(),
            g_int: Vector3::zeros(),
            f_mean: Vector3::zeros(),
            c_mean: Matrix3::identity(),
            fc_moment: Matrix3::zeros(),
        };
        Self {
            earth,
            interval,
            track,
            snapshots: vec![first],
            sum_cf: Vector3::zeros(),
            sum_c: Matrix3::zeros(),
            sum_fc: Matrix3::zeros(),
            count: 0,
        }
    }

    pub fn track(&self) -> &TrackState {
        &self.track
    }

    pub fn snapshots(&self) -> &[KeyframeSnapshot] {
        &self.snapshots
    }

    /// Consumes one sample; returns the index of a newly closed keyframe.
    pub fn push(&mut self, sample: &ImuSample) -> Result<Option<usize>, CoarseError> {
        self.track = self.track.step(sample, &self.earth)?;
        let c = self.track.c_b_ib0;
        let cf = c * sample.accel;
        self.sum_cf += cf;
        self.sum_fc += skew(&cf) * (self.sum_c + c.matrix() * 0.5);
        self.sum_c += c.matrix();
        self.count += 1;
        self.close_interval();

        let next_index = self.snapshots.len();
        let due = next_index as f64 * self.interval;
        if self.track.t + 1e-9 < due {
            return Ok(None);
        }
        self.sum_cf = Vector3::zeros();
        self.sum_c = Matrix3::zeros();
        self.sum_fc = Matrix3::zeros();
        self.count = 0;
        self.snapshots.push(KeyframeSnapshot {
            index: next_index,
            t: due,
            c_b_ib0: c,
            f_tilde: self.track.f_tilde,
            g_int: self.track.g_int,
            f_mean: Vector3::zeros(),
            c_mean: c.into_inner(),
            fc_moment: Matrix3::zeros(),
        });
        Ok(Some(next_index))
    }

    fn close_interval(&mut self) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        let last = self.snapshots.last_mut().expect("builder always holds a snapshot");
        last.f_mean = self.sum_cf / n;
        last.c_mean = self.sum_c / n;
        last.fc_moment = self.sum_fc * (2.0 / (n * n));
    }

    pub fn into_snapshots(self) -> Vec<KeyframeSnapshot> {
        self.snapshots
    }
}

/// Runs attitude tracking over a stream and returns all keyframe snapshots.
pub fn extract_keyframes(samples: &[ImuSample], earth: &EarthParams, interval: f64) -> Result<Vec<KeyframeSnapshot>, CoarseError> {
    let mut builder = KeyframeBuilder::new(*earth, interval);
    for s in samples {
        builder.push(s)?;
    }
    Ok(builder.into_snapshots())
}
