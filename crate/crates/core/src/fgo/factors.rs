//! Residuals and Jacobians of the three factor types.

use super::graph::{ConstantAttitude, KeyframeSnapshot, NodeState};
use crate::rotation::{skew, Vector3};
use nalgebra::{Matrix3, SMatrix, SVector};

pub type NodeVector = SVector<f64, 12>;
pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Matrix3x12 = SMatrix<f64, 3, 12>;

/// Linear keyframe-to-keyframe transition `x_{k+1} ≈ A·x_k`:
///
/// ```text
/// φ'  = φ − C̄·ε·dt
/// δF' = δF + (C̄·∇ + [f̄]×·φ)·dt − M·ε·dt²/2
/// ε'  = ε
/// ∇'  = ∇
/// ```
///
/// `C̄` and `f̄` are the interval means stored in the snapshot and `M` its
/// force-attitude moment, which accounts for φ drifting inside the interval.
pub fn transition_matrix(snap: &KeyframeSnapshot, dt: f64) -> Matrix12 {
    let mut a = Matrix12::identity();
    let c_dt = snap.c_mean * dt;
    a.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-c_dt));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&snap.f_mean) * dt));
    a.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-snap.fc_moment * (0.5 * dt * dt)));
    a.fixed_view_mut::<3, 3>(3, 9).copy_from(&c_dt);
    a
}

/// INS factor: `r = x_{k+1} − A·x_k`, with `∂r/∂x_k = −A` and `∂r/∂x_{k+1} = I`.
pub fn ins_factor(x_k: &NodeState, x_next: &NodeState, snap: &KeyframeSnapshot, dt: f64) -> (NodeVector, Matrix12, Matrix12) {
    let a = transition_matrix(snap, dt);
    let r = x_next.to_vector() - a * x_k.to_vector();
    (r, -a, Matrix12::identity())
}

/// Measurement factor: `r = R·(F̃_k − δF_k) − G_k`.
///
/// Returns the residual, its Jacobian with respect to the node state and with
/// respect to a left perturbation `R ← exp([ϕ]×)·R` of the constant attitude.
pub fn measurement_factor(x_k: &NodeState, c: &ConstantAttitude, snap: &KeyframeSnapshot) -> (Vector3, Matrix3x12, Matrix3<f64>) {
    let rotated = c.0 * (snap.f_tilde - x_k.delta_f);
    let r = rotated - snap.g_int;
    let mut j_x = Matrix3x12::zeros();
    j_x.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-c.0.matrix()));
    (r, j_x, -skew(&rotated))
}

/// Prior on the first keyframe: `r = m − x_1`, `J = −I`.
pub fn prior_factor(x_first: &NodeState, mean: &NodeState) -> (NodeVector, Matrix12) {
    (mean.to_vector() - x_first.to_vector(), -Matrix12::identity())
}
