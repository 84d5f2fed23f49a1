//! SO(3) helpers and earth/frame mathematics.
//!
//! Frames follow the east-north-up (ENU) navigation convention. Body axes are
//! x-right, y-forward, z-up, and heading is the bow direction measured east of
//! north. A [`RotationMatrix`] `C_a^b` maps coordinates of a vector from frame
//! `a` to frame `b`.

use nalgebra::{Matrix3, Rotation3, Vector3 as NaVector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector3 = NaVector3<f64>;
pub type RotationMatrix = Rotation3<f64>;

/// Nominal earth rotation rate, rad/s.
pub const EARTH_RATE: f64 = 7.292_115e-5;
/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.806_65;

const SMALL_ANGLE: f64 = 1e-8;
const MAX_ORTHO_DEFECT: f64 = 0.1;
const GIMBAL_LOCK_PITCH_DEG: f64 = 89.999;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RotationError {
    #[error("matrix is too far from orthonormal (|RᵀR − I|_F = {defect:.3e}); integration diverged")]
    NotNearRotation { defect: f64 },
    #[error("pitch {pitch_deg:.4}° is at gimbal lock; only heading/roll combinations are meaningful")]
    GimbalLock { pitch_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthParams {
    /// Geodetic latitude, rad.
    pub latitude: f64,
    /// Earth rotation rate, rad/s.
    pub earth_rate: f64,
    /// Gravity magnitude, m/s².
    pub gravity: f64,
}

impl EarthParams {
    pub fn new(latitude: f64) -> Self {
        Self {
            latitude,
            earth_rate: EARTH_RATE,
            gravity: STANDARD_GRAVITY,
        }
    }

    pub fn from_latitude_deg(latitude_deg: f64) -> Self {
        Self::new(latitude_deg.to_radians())
    }

    /// Earth rotation rate expressed in the ENU navigation frame.
    pub fn earth_rate_n(&self) -> Vector3 {
        let (s, c) = self.latitude.sin_cos();
        Vector3::new(0.0, self.earth_rate * c, self.earth_rate * s)
    }
}

impl Default for EarthParams {
    fn default() -> Self {
        Self::from_latitude_deg(45.0)
    }
}

/// Heading, pitch and roll in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// The cross-product matrix: `skew(v) * w == v × w`.
pub fn skew(v: &Vector3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential of a rotation vector.
pub fn so3_exp(v: &Vector3) -> RotationMatrix {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(v);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation3::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`so3_exp`]; the returned angle lies in `[0, π]`.
pub fn so3_log(r: &RotationMatrix) -> Vector3 {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);

    if cos_theta > 1.0 - 1e-6 {
        // sin θ / θ ≈ 1 − θ²/6 with θ² ≈ |vee|²/4
        let s2 = vee.norm_squared() * 0.25;
        return vee * 0.5 * (1.0 + s2 / 6.0);
    }
    if cos_theta > -0.99 {
        let theta = cos_theta.acos();
        return vee * (theta / (2.0 * theta.sin()));
    }

    // Near π: the axis is recovered from the symmetric part, (R + Rᵀ)/2 − cos θ·I = (1 − cos θ)·n·nᵀ.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let col = (0..3)
        .max_by(|&a, &b| diag[a].total_cmp(&diag[b]))
        .unwrap_or(0);
    let mut axis: Vector3 = sym.column(col).into_owned();
    axis /= axis.norm();
    if vee.norm_squared() > 1e-24 {
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            axis = -axis;
        }
    }
    // Refine the angle with the antisymmetric part when it carries information.
    let sin_theta = 0.5 * vee.dot(&axis);
    let theta = sin_theta.atan2(cos_theta);
    axis * theta
}

/// Projects a near-rotation matrix onto SO(3) (polar decomposition via SVD).
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<RotationMatrix, RotationError> {
    let defect = (m.transpose() * m - Matrix3::identity()).norm();
    if !(defect < MAX_ORTHO_DEFECT) {
        return Err(RotationError::NotNearRotation { defect });
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u requested");
    let v_t = svd.v_t.expect("svd v_t requested");
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * v_t).determinant().signum();
    Ok(Rotation3::from_matrix_unchecked(u * d * v_t))
}

/// `C_n^{in0}(t)`: rotation of the navigation frame relative to its inertial
/// copy frozen at `t = 0`.
pub fn earth_rotation_dcm(p: &EarthParams, t: f64) -> RotationMatrix {
    so3_exp(&(p.earth_rate_n() * t))
}

/// Gravity vector in the navigation frame.
pub fn gravity_n(p: &EarthParams) -> Vector3 {
    Vector3::new(0.0, 0.0, -p.gravity)
}

/// Elementary rotation about the up axis, counter-clockwise seen from above.
pub fn rot_z(angle: f64) -> RotationMatrix {
    so3_exp(&Vector3::new(0.0, 0.0, angle))
}

/// Wraps an angle in degrees to `(−180, 180]`.
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Builds `C_b^n = Rz(−ψ)·Rx(θ)·Ry(γ)` from heading/pitch/roll in degrees.
pub fn heading_pitch_roll_to_dcm(angles: &EulerAngles) -> RotationMatrix {
    let heading = so3_exp(&Vector3::new(0.0, 0.0, -angles.heading.to_radians()));
    let pitch = so3_exp(&Vector3::new(angles.pitch.to_radians(), 0.0, 0.0));
    let roll = so3_exp(&Vector3::new(0.0, angles.roll.to_radians(), 0.0));
    heading * pitch * roll
}

/// Decomposes `C_b^n` into heading (east of north), pitch and roll.
pub fn dcm_to_heading_pitch_roll(c_b_n: &RotationMatrix) -> Result<EulerAngles, RotationError> {
    let m = c_b_n.matrix();
    let pitch = m[(2, 1)].clamp(-1.0, 1.0).asin().to_degrees();
    if pitch.abs() > GIMBAL_LOCK_PITCH_DEG {
        return Err(RotationError::GimbalLock { pitch_deg: pitch });
    }
    let heading = wrap_deg(m[(0, 1)].atan2(m[(1, 1)]).to_degrees());
    let roll = wrap_deg((-m[(2, 0)]).atan2(m[(2, 2)]).to_degrees());
    Ok(EulerAngles { heading, pitch, roll })
}

/// Heading of `C_b^n` in degrees; defined even at gimbal lock (the forward
/// axis projection is used directly).
pub fn heading_deg(c_b_n: &RotationMatrix) -> f64 {
    let m = c_b_n.matrix();
    wrap_deg(m[(0, 1)].atan2(m[(1, 1)]).to_degrees())
}

/// Geodesic angle between two rotations, rad.
pub fn angle_between(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    so3_log(&(a.inverse() * b)).norm()
}

/// Frobenius norm of `CᵀC − I`.
pub fn orthogonality_defect(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

pub fn deg_per_hour(rad_per_s: f64) -> f64 {
    rad_per_s.to_degrees() * 3600.0
}

pub fn rad_per_s_from_deg_per_hour(deg_h: f64) -> f64 {
    deg_h.to_radians() / 3600.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI as HALF_TURN;

    fn vec3() -> impl Strategy<Value = Vector3> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn series_exp(v: &Vector3) -> Matrix3<f64> {
        let k = skew(v);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for n in 1..=30 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_matches_definition() {
        let m = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(m, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn exp_known_values() {
        assert_eq!(so3_exp(&Vector3::zeros()).into_inner(), Matrix3::identity());
        let q = so3_exp(&Vector3::new(0.0, 0.0, HALF_TURN / 2.0));
        let want = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((q.matrix() - want).norm() < 1e-15);
        let log = so3_log(&q);
        assert!((log - Vector3::new(0.0, 0.0, HALF_TURN / 2.0)).norm() < 1e-15);
        assert_eq!(so3_log(&RotationMatrix::identity()), Vector3::zeros());
    }

    #[test]
    fn log_at_half_turn() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(1.0, -2.0, 0.5).normalize()] {
            let r = so3_exp(&(axis * HALF_TURN));
            let v = so3_log(&r);
            assert_relative_eq!(v.norm(), HALF_TURN, epsilon = 1e-9);
            assert!((so3_exp(&v).matrix() - r.matrix()).norm() < 1e-9);
        }
        // Exact diagonal half-turn: sign tie-break makes the first nonzero component positive.
        let r = RotationMatrix::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)));
        assert_eq!(so3_log(&r), Vector3::new(0.0, 0.0, HALF_TURN));
    }

    #[test]
    fn orthonormalize_rejects_far_matrix() {
        let m = Matrix3::identity() * 1.2;
        let defect = orthogonality_defect(&m);
        assert!(defect > 0.5);
        assert!(matches!(orthonormalize(&m), Err(RotationError::NotNearRotation { .. })));
    }

    #[test]
    fn orthonormalize_nearest_rotation() {
        let r = so3_exp(&Vector3::new(0.3, -0.7, 1.1));
        assert!((orthonormalize(r.matrix()).unwrap().matrix() - r.matrix()).norm() < 1e-12);

        let noisy = r.matrix() + Matrix3::new(1.0, -2.0, 0.5, 0.3, 0.1, -0.9, 1.5, 0.2, -0.4) * 1e-6;
        let out = orthonormalize(&noisy).unwrap();
        assert!(orthogonality_defect(out.matrix()) < 1e-12);
        let best = (out.matrix() - noisy).norm();
        // Sampled competitors around the projected point.
        let mut seed = 7u64;
        for _ in 0..500 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e-5;
            let b = ((seed >> 7 & 0xffff) as f64 / 65536.0 - 0.5) * 1e-5;
            let c = ((seed >> 23 & 0xffff) as f64 / 65536.0 - 0.5) * 1e-5;
            let q = so3_exp(&Vector3::new(a, b, c)) * out;
            assert!(best <= (q.matrix() - noisy).norm() + 1e-15);
        }
    }

    #[test]
    fn earth_rotation_reductions() {
        let p = EarthParams::default();
        assert_eq!(earth_rotation_dcm(&p, 0.0).into_inner(), Matrix3::identity());

        let pole = EarthParams::new(HALF_TURN / 2.0);
        let t = 5000.0;
        let want = rot_z(pole.earth_rate * t);
        assert!((earth_rotation_dcm(&pole, t).matrix() - want.matrix()).norm() < 1e-14);
    }

    #[test]
    fn earth_rotation_closed_form() {
        // Entries of the closed-form ENU earth-rotation DCM.
        let p = EarthParams::from_latitude_deg(45.0);
        let t = 3600.0;
        let (sl, cl) = p.latitude.sin_cos();
        let (s, c) = (p.earth_rate * t).sin_cos();
        let want = Matrix3::new(
            c, -s * sl, s * cl,
            s * sl, 1.0 - (1.0 - c) * sl * sl, (1.0 - c) * sl * cl,
            -s * cl, (1.0 - c) * sl * cl, 1.0 - (1.0 - c) * cl * cl,
        );
        let got = earth_rotation_dcm(&p, t);
        assert!((got.matrix() - want).norm() < 1e-12);
        let oracle = series_exp(&(p.earth_rate_n() * t));
        assert!((got.matrix() - oracle).norm() < 1e-12);
    }

    #[test]
    fn gravity_vector() {
        let mut p = EarthParams::default();
        assert_eq!(gravity_n(&p), Vector3::new(0.0, 0.0, -9.80665));
        p.gravity = 9.78;
        assert_eq!(gravity_n(&p), Vector3::new(0.0, 0.0, -9.78));
        assert_eq!(gravity_n(&p).norm(), 9.78);
    }

    #[test]
    fn heading_sign_convention() {
        let e = dcm_to_heading_pitch_roll(&RotationMatrix::identity()).unwrap();
        assert_eq!((e.heading, e.pitch, e.roll), (0.0, 0.0, 0.0));

        let c = rot_z((-30.0f64).to_radians());
        let e = dcm_to_heading_pitch_roll(&c).unwrap();
        assert_relative_eq!(e.heading, 30.0, epsilon = 1e-12);
        // forward axis points 30° east of north
        let fwd = c * Vector3::y();
        assert_relative_eq!(fwd.x, 0.5, epsilon = 1e-12);
        assert!((heading_pitch_roll_to_dcm(&e).matrix() - c.matrix()).norm() < 1e-12);

        let up = heading_pitch_roll_to_dcm(&EulerAngles { heading: 10.0, pitch: 90.0, roll: 0.0 });
        assert!(matches!(dcm_to_heading_pitch_roll(&up), Err(RotationError::GimbalLock { .. })));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(359.0), -1.0);
        assert_eq!(wrap_deg(-539.0), -179.0);
    }

    proptest! {
        #[test]
        fn skew_is_cross_product(v in vec3(), w in vec3()) {
            let diff = skew(&v) * w - v.cross(&w);
            prop_assert!(diff.norm() < 1e-12);
            prop_assert_eq!(skew(&v), -skew(&v).transpose());
        }

        #[test]
        fn skew_is_linear(u in vec3(), v in vec3(), a in -4.0..4.0f64, b in -4.0..4.0f64) {
            // Exact up to the rounding of a·u + b·v itself.
            let lhs = skew(&(u * a + v * b));
            let rhs = skew(&u) * a + skew(&v) * b;
            prop_assert!((lhs - rhs).amax() <= 4.0 * f64::EPSILON * (a.abs() * u.amax() + b.abs() * v.amax()));
        }

        #[test]
        fn exp_matches_power_series(v in vec3()) {
            prop_assume!(v.norm() < HALF_TURN);
            prop_assert!((so3_exp(&v).matrix() - series_exp(&v)).norm() < 1e-12);
        }

        #[test]
        fn exp_of_negation_is_inverse(v in vec3()) {
            let prod = so3_exp(&v) * so3_exp(&-v);
            prop_assert!((prod.matrix() - Matrix3::identity()).norm() < 1e-12);
        }

        #[test]
        fn exp_log_roundtrip(v in vec3()) {
            let r = so3_exp(&v);
            let w = so3_log(&r);
            prop_assert!(w.norm() <= HALF_TURN + 1e-12);
            prop_assert!((so3_exp(&w).matrix() - r.matrix()).norm() < 1e-9);
        }

        #[test]
        fn product_stays_rotation(a in vec3(), b in vec3()) {
            let p = so3_exp(&a) * so3_exp(&b);
            prop_assert!(orthogonality_defect(p.matrix()) < 1e-12);
            prop_assert!((p.matrix().determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn earth_rotation_subgroup(t1 in 0.0..1e5f64, t2 in 0.0..1e5f64, lat in -90.0..90.0f64) {
            let p = EarthParams::from_latitude_deg(lat);
            let lhs = earth_rotation_dcm(&p, t1) * earth_rotation_dcm(&p, t2);
            prop_assert!((lhs.matrix() - earth_rotation_dcm(&p, t1 + t2).matrix()).norm() < 1e-10);
        }

        #[test]
        fn euler_roundtrip(h in -179.9..180.0f64, p in -88.9..88.9f64, r in -179.9..180.0f64) {
            let c = heading_pitch_roll_to_dcm(&EulerAngles { heading: h, pitch: p, roll: r });
            let e = dcm_to_heading_pitch_roll(&c).unwrap();
            prop_assert!((heading_pitch_roll_to_dcm(&e).matrix() - c.matrix()).norm() < 1e-9);
            prop_assert!(e.heading > -180.0 && e.heading <= 180.0);
        }
    }
}
