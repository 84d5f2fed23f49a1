//! Optimization-based coarse alignment (OBA): attitude tracking in the
//! initial body inertial frame, accumulation of matched specific-force and
//! gravity integrals, and the SVD solution of the Wahba problem.

use crate::rotation::{
    earth_rotation_dcm, gravity_n, orthonormalize, so3_exp, EarthParams, RotationError, RotationMatrix, Vector3,
};
use crate::sim::ImuSample;
use nalgebra::Matrix3;
use thiserror::Error;

/// Steps between re-orthonormalizations of the tracked attitude.
pub const REORTHONORMALIZE_EVERY: u64 = 100;
/// Default spacing of (F̃, G) pair snapshots, s.
pub const DEFAULT_PAIR_INTERVAL: f64 = 1.0;

const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoarseError {
    #[error("sample at t = {t} s is not finite")]
    NonFiniteSample { t: f64 },
    #[error("time step {dt} s must be positive")]
    NonPositiveStep { dt: f64 },
    #[error("rotation increment {angle} rad per step is not below π")]
    StepTooLarge { angle: f64 },
    #[error("need at least 2 vector pairs, got {0}")]
    TooFewPairs(usize),
    #[error("degenerate vector geometry: σ₂/σ₁ = {ratio:.3e}; rotation about the common axis is unobservable")]
    DegenerateGeometry { ratio: f64 },
    #[error("pair interval {pair_interval} s is shorter than the sample interval")]
    PairIntervalTooShort { pair_interval: f64 },
    #[error("empty sample stream")]
    EmptyStream,
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// Running attitude and vector integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub t: f64,
    /// Tracked `C_b^{ĩb0}`.
    pub c_b_ib0: RotationMatrix,
    /// Accumulated specific-force integral in the tracked initial body frame, m/s.
    pub f_tilde: Vector3,
    /// Accumulated gravity integral in the initial navigation frame, m/s.
    pub g_int: Vector3,
    steps: u64,
}

impl Default for TrackState {
    fn default() -> Self {
        Self {
            t: 0.0,
            c_b_ib0: RotationMatrix::identity(),
            f_tilde: Vector3::zeros(),
            g_int: Vector3::zeros(),
            steps: 0,
        }
    }
}

impl TrackState {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Propagates then accumulates with one sample covering `(t, sample.t]`.
    pub fn step(&self, sample: &ImuSample, p: &EarthParams) -> Result<TrackState, CoarseError> {
        let dt = sample.t - self.t;
        let s = propagate_attitude(self, sample, dt)?;
        accumulate_vectors(&s, sample, p, dt)
    }
}

/// Single-interval Rodrigues attitude update, `C ← C·exp(dt·ω̃)`.
pub fn propagate_attitude(s: &TrackState, sample: &ImuSample, dt: f64) -> Result<TrackState, CoarseError> {
    if !sample.is_finite() {
        return Err(CoarseError::NonFiniteSample { t: sample.t });
    }
    if !(dt > 0.0) {
        return Err(CoarseError::NonPositiveStep { dt });
    }
    let increment = sample.gyro * dt;
    let angle = increment.norm();
    if angle >= std::f64::consts::PI {
        return Err(CoarseError::StepTooLarge { angle });
    }
    let mut c = s.c_b_ib0 * so3_exp(&increment);
    let steps = s.steps + 1;
    if steps.is_multiple_of(REORTHONORMALIZE_EVERY) {
        c = orthonormalize(c.matrix())?;
    }
    Ok(TrackState { c_b_ib0: c, steps, ..s.clone() })
}

/// Adds one rectangle of the specific-force and gravity integrals, evaluated
/// at the end of the step, and advances time.
pub fn accumulate_vectors(s: &TrackState, sample: &ImuSample, p: &EarthParams, dt: f64) -> Result<TrackState, CoarseError> {
    if !(dt > 0.0) {
        return Err(CoarseError::NonPositiveStep { dt });
    }
    let t = s.t + dt;
    let f_tilde = s.f_tilde + s.c_b_ib0 * sample.accel * dt;
    let g_int = s.g_int - earth_rotation_dcm(p, t) * gravity_n(p) * dt;
    Ok(TrackState { t, f_tilde, g_int, ..s.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WahbaSolution {
    /// Estimated `C_{ib0}^{in0}`.
    pub rotation: RotationMatrix,
    /// `Σ‖R·F̃_k − G_k‖²` at the optimum.
    pub residual_cost: f64,
    pub pair_count: usize,
}

/// Incremental sums for the Wahba problem `min_R Σ‖R·f_k − g_k‖²`.
#[derive(Debug, Clone, Default)]
pub struct WahbaAccumulator {
    /// `B = Σ g_k·f_kᵀ`
    b: Matrix3<f64>,
    norm_sum: f64,
    count: usize,
}

impl WahbaAccumulator {
    pub fn push(&mut self, f: &Vector3, g: &Vector3) {
        self.b += g * f.transpose();
        self.norm_sum += f.norm_squared() + g.norm_squared();
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn solve(&self) -> Result<WahbaSolution, CoarseError> {
        if self.count < 2 {
            return Err(CoarseError::TooFewPairs(self.count));
        }
        let (u, sv, v) = svd3(&self.b);
        let ratio = if sv[0] > 0.0 { sv[1] / sv[0] } else { 0.0 };
        if !(ratio >= DEGENERATE_RATIO) {
            return Err(CoarseError::DegenerateGeometry { ratio });
        }
        let mut d = Matrix3::identity();
        d[(2, 2)] = (u * v.transpose()).determinant().signum();
        let r = u * d * v.transpose();
        let residual_cost = (self.norm_sum - 2.0 * (r.transpose() * self.b).trace()).max(0.0);
        Ok(WahbaSolution {
            rotation: RotationMatrix::from_matrix_unchecked(r),
            residual_cost,
            pair_count: self.count,
        })
    }
}

/// One-sided Jacobi SVD of a 3×3 matrix: `a = u·diag(σ)·vᵀ`, σ sorted
/// descending, `u` and `v` orthogonal.
///
/// Backward stable to a few ulps of ‖a‖, so the second singular vector stays
/// accurate when σ₂/σ₁ is as small as 1e-9.
fn svd3(a: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 3], Matrix3<f64>) {
    let mut w = *a;
    let mut v = Matrix3::identity();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = w.column(p).norm_squared();
            let beta = w.column(q).norm_squared();
            let gamma = w.column(p).dot(&w.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for m in [&mut w, &mut v] {
                for i in 0..3 {
                    let (x, y) = (m[(i, p)], m[(i, q)]);
                    m[(i, p)] = c * x - s * y;
                    m[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms = [w.column(0).norm(), w.column(1).norm(), w.column(2).norm()];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sv = order.map(|i| norms[i]);
    let v = Matrix3::from_columns(&order.map(|i| v.column(i).into_owned()));
    let w = Matrix3::from_columns(&order.map(|i| w.column(i).into_owned()));
    let unit = |x: Vector3, fallback: Vector3| if x.norm() > 0.0 { x.normalize() } else { fallback };
    let u0 = unit(w.column(0).into_owned(), Vector3::x());
    let mut u1 = unit(w.column(1).into_owned(), u0.cross(&Vector3::x()));
    if u1.norm() < 0.5 || u0.dot(&u1).abs() > 0.5 {
        u1 = u0.cross(&Vector3::y()).normalize();
    }
    let mut u2 = u0.cross(&u1);
    if u2.dot(&w.column(2)) < 0.0 {
        u2 = -u2;
    }
    (Matrix3::from_columns(&[u0, u1, u2]), sv, v)
}

/// Solves `min_R Σ‖R·F̃_k − G_k‖²` over rotations by SVD.
pub fn solve_wahba(pairs: &[(Vector3, Vector3)]) -> Result<WahbaSolution, CoarseError> {
    let mut acc = WahbaAccumulator::default();
    for (f, g) in pairs {
        acc.push(f, g);
    }
    acc.solve()
}

/// Wahba objective for a candidate rotation.
pub fn wahba_cost(r: &RotationMatrix, pairs: &[(Vector3, Vector3)]) -> f64 {
    pairs.iter().map(|(f, g)| (r * f - g).norm_squared()).sum()
}

/// Attitude estimate at one epoch; `None` while the geometry is not yet observable.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeEpoch {
    pub t: f64,
    pub c_b_n: Option<RotationMatrix>,
}

/// Coarse alignment over a whole stream. Emits one epoch per pair snapshot
/// once at least two pairs exist.
pub fn coarse_align(samples: &[ImuSample], p: &EarthParams, pair_interval: f64) -> Result<Vec<AttitudeEpoch>, CoarseError> {
    if samples.is_empty() {
        return Err(CoarseError::EmptyStream);
    }
    let mut aligner = CoarseAligner::new(*p, pair_interval);
    let mut out = Vec::new();
    for s in samples {
        if let Some(epoch) = aligner.push(s)? {
            out.push(epoch);
        }
    }
    Ok(out)
}

/// Streaming form of [`coarse_align`].
#[derive(Debug, Clone)]
pub struct CoarseAligner {
    earth: EarthParams,
    pair_interval: f64,
    state: TrackState,
    wahba: WahbaAccumulator,
    next_snapshot: u64,
}

impl CoarseAligner {
    pub fn new(earth: EarthParams, pair_interval: f64) -> Self {
        Self {
            earth,
            pair_interval,
            state: TrackState::default(),
            wahba: WahbaAccumulator::default(),
            next_snapshot: 1,
        }
    }

    pub fn state(&self) -> &TrackState {
        &self.state
    }

    pub fn pair_count(&self) -> usize {
        self.wahba.len()
    }

    pub fn push(&mut self, sample: &ImuSample) -> Result<Option<AttitudeEpoch>, CoarseError> {
        if self.state.steps == 0 && !(self.pair_interval >= sample.t - self.state.t) {
            return Err(CoarseError::PairIntervalTooShort { pair_interval: self.pair_interval });
        }
        self.state = self.state.step(sample, &self.earth)?;
        let due = self.next_snapshot as f64 * self.pair_interval;
        if self.state.t + 1e-9 < due {
            return Ok(None);
        }
        self.next_snapshot += 1;
        self.wahba.push(&self.state.f_tilde, &self.state.g_int);
        if self.wahba.len() < 2 {
            return Ok(None);
        }
        let c_b_n = match self.wahba.solve() {
            Ok(sol) => Some(self.attitude(&sol.rotation)),
            Err(CoarseError::DegenerateGeometry { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Some(AttitudeEpoch { t: self.state.t, c_b_n }))
    }

    /// `C_b^n = C_{in0}^n · C_{ib0}^{in0} · C_b^{ib0}` for the current tracked attitude.
    pub fn attitude(&self, c_ib0_in0: &RotationMatrix) -> RotationMatrix {
        earth_rotation_dcm(&self.earth, self.state.t).inverse() * c_ib0_in0 * self.state.c_b_ib0
    }

    /// Latest Wahba solution, if the geometry allows one.
    pub fn solve(&self) -> Result<WahbaSolution, CoarseError> {
        self.wahba.solve()
    }
}
