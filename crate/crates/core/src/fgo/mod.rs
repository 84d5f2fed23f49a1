//! Unified self-alignment by factor graph optimization.
//!
//! Variables are the keyframe error states `x_k = (φ, δF, ε, ∇)` expressed in
//! the initial body inertial frame, plus one constant attitude
//! `C_{ib0}^{in0}` shared by every measurement. INS factors chain consecutive
//! keyframes, measurement factors tie each keyframe to the constant attitude
//! through the specific-force/gravity matching relation, and a prior anchors
//! the first keyframe. The MAP estimate is found by damped Gauss-Newton on
//! `SO(3) × R^{12n}`.

mod aligner;
mod factors;
mod graph;
mod solver;

pub use aligner::{align_batch, align_series, attitude_output, BiasCorrection, FgoBatch, FgoConfig, FgoEpoch, FgoRun};
pub use factors::{ins_factor, measurement_factor, prior_factor, transition_matrix, Matrix12, NodeVector};
pub use graph::{
    extract_keyframes, ConstantAttitude, FactorGraph, KeyframeBuilder, KeyframeSnapshot, NodeState, NoiseModel,
    DEFAULT_KEYFRAME_INTERVAL,
};
pub use solver::{solve, Solution, SolveReport, SolverOptions, TraceRow, TRACE_CSV_HEADER};

use crate::coarse::CoarseError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FgoError {
    #[error("keyframe index {got} does not follow the current node count {expected}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("keyframe spacing {got} s does not match the graph interval {expected} s")]
    IntervalMismatch { expected: f64, got: f64 },
    #[error("need at least {needed} keyframes, graph has {got}")]
    TooFewKeyframes { needed: usize, got: usize },
    #[error("initial attitude: {0}")]
    Initialization(#[from] CoarseError),
    #[error("normal equations are not positive definite even with damping")]
    SingularSystem,
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}
