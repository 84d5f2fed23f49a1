use super::factors::transition_matrix;
use super::graph::{ConstantAttitude, FactorGraph, KeyframeBuilder, KeyframeSnapshot, NodeState, NoiseModel, DEFAULT_KEYFRAME_INTERVAL};
use super::solver::{solve, Solution, SolveReport, SolverOptions};
use super::FgoError;
use crate::coarse::CoarseError;
use crate::rotation::{earth_rotation_dcm, rad_per_s_from_deg_per_hour, so3_exp, EarthParams, RotationMatrix, Vector3};
use crate::sim::{ImuSample, MILLI_G};

#[derive(Debug, Clone, PartialEq)]
pub struct FgoConfig {
    pub keyframe_interval: f64,
    /// Gyro angular random walk assumed by the noise model, rad/√s.
    pub gyro_arw: f64,
    /// Accelerometer velocity random walk assumed by the noise model, (m/s)/√s.
    pub accel_vrw: f64,
    /// Re-solve every `stride` keyframes.
    pub stride: usize,
    /// Extra solves per epoch after re-tracking the stream with the latest
    /// bias estimate removed. `0` solves the raw stream once.
    pub feedback_passes: usize,
    pub solver: SolverOptions,
}

impl Default for FgoConfig {
    fn default() -> Self {
        Self {
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            gyro_arw: 0.1f64.to_radians() / 60.0,
            accel_vrw: 50e-6 * crate::rotation::STANDARD_GRAVITY,
            stride: 1,
            feedback_passes: 3,
            solver: SolverOptions::default(),
        }
    }
}

impl FgoConfig {
    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::from_densities(self.gyro_arw, self.accel_vrw, self.keyframe_interval)
    }
}

/// Output of one re-solve.
#[derive(Debug, Clone)]
pub struct FgoEpoch {
    pub t: f64,
    /// `None` until the vector geometry makes the constant attitude observable.
    pub c_b_n: Option<RotationMatrix>,
    /// Total gyro bias estimate (feedback plus graph estimate), rad/s.
    pub gyro_bias: Vector3,
    /// Total accelerometer bias estimate, m/s².
    pub accel_bias: Vector3,
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone)]
pub struct FgoRun {
    pub epochs: Vec<FgoEpoch>,
    /// Graph and estimate after the last solve.
    pub graph: FactorGraph,
    /// Bias correction applied to the stream the final graph was built from.
    pub feedback: BiasCorrection,
}

impl FgoRun {
    pub fn last_solved(&self) -> Option<&FgoEpoch> {
        self.epochs.iter().rev().find(|e| e.c_b_n.is_some())
    }
}

/// Sensor bias removed from the raw samples before attitude tracking.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BiasCorrection {
    pub gyro: Vector3,
    pub accel: Vector3,
}

impl BiasCorrection {
    pub fn apply(&self, s: &ImuSample) -> ImuSample {
        ImuSample { t: s.t, gyro: s.gyro - self.gyro, accel: s.accel - self.accel }
    }

    fn prior_mean(&self) -> NodeState {
        NodeState { gyro_bias: -self.gyro, accel_bias: -self.accel, ..Default::default() }
    }

    fn is_close(&self, other: &Self) -> bool {
        (self.gyro - other.gyro).amax() < rad_per_s_from_deg_per_hour(FEEDBACK_GYRO_TOLERANCE_DEG_H)
            && (self.accel - other.accel).amax() < FEEDBACK_ACCEL_TOLERANCE_MG * MILLI_G
    }
}

const FEEDBACK_GYRO_TOLERANCE_DEG_H: f64 = 0.1;
const FEEDBACK_ACCEL_TOLERANCE_MG: f64 = 0.01;

/// `C_b^n = C_{in0}^n · C_{ib0}^{in0} · exp([φ_n]×) · C_b^{ĩb0}(t_n)`.
pub fn attitude_output(nodes: &[NodeState], c: &ConstantAttitude, snap: &KeyframeSnapshot, p: &EarthParams) -> RotationMatrix {
    let phi = nodes.get(snap.index).map(|n| n.phi).unwrap_or_else(Vector3::zeros);
    earth_rotation_dcm(p, snap.t).inverse() * c.0 * so3_exp(&phi) * snap.c_b_ib0
}

/// Keyframe snapshots of a bias-corrected stream, extended on demand.
struct Tracker<'a> {
    samples: &'a [ImuSample],
    earth: EarthParams,
    interval: f64,
    correction: BiasCorrection,
    builder: KeyframeBuilder,
    consumed: usize,
}

impl<'a> Tracker<'a> {
    fn new(samples: &'a [ImuSample], earth: EarthParams, interval: f64, correction: BiasCorrection) -> Self {
        Self { samples, earth, interval, correction, builder: KeyframeBuilder::new(earth, interval), consumed: 0 }
    }

    /// Advances until keyframe `index` exists; `false` if the stream ends first.
    fn reach(&mut self, index: usize) -> Result<bool, CoarseError> {
        while self.builder.snapshots().len() <= index {
            let Some(s) = self.samples.get(self.consumed) else {
                return Ok(false);
            };
            self.builder.push(&self.correction.apply(s))?;
            self.consumed += 1;
        }
        Ok(true)
    }

    fn retrack(&mut self, correction: BiasCorrection, index: usize) -> Result<(), CoarseError> {
        *self = Self::new(self.samples, self.earth, self.interval, correction);
        self.reach(index)?;
        Ok(())
    }
}

/// Rebuilds the graph's snapshots from the tracker, keeping node estimates as
/// the warm start and shifting their biases by the change in correction.
fn refresh_graph(graph: &mut FactorGraph, tracker: &Tracker, index: usize, previous: &BiasCorrection) {
    let snaps = &tracker.builder.snapshots()[..=index];
    graph.keyframes.clear();
    graph.keyframes.extend_from_slice(snaps);
    let shift = BiasCorrection { gyro: tracker.correction.gyro - previous.gyro, accel: tracker.correction.accel - previous.accel };
    for n in &mut graph.nodes {
        n.gyro_bias -= shift.gyro;
        n.accel_bias -= shift.accel;
    }
    graph.prior_mean = tracker.correction.prior_mean();
}

fn total_bias(correction: &BiasCorrection, node: &NodeState) -> BiasCorrection {
    BiasCorrection { gyro: correction.gyro + node.gyro_bias, accel: correction.accel + node.accel_bias }
}

/// Solves the graph, then re-tracks with the estimated bias removed and
/// re-solves until the estimate settles or the passes run out.
fn solve_with_feedback(graph: &mut FactorGraph, tracker: &mut Tracker, index: usize, cfg: &FgoConfig) -> Result<Solution, FgoError> {
    let mut sol = solve(graph, graph.constant, &cfg.solver)?;
    for _ in 0..cfg.feedback_passes {
        let last = sol.nodes.last().expect("graph is non-empty");
        let target = total_bias(&tracker.correction, last);
        if target.is_close(&tracker.correction) {
            break;
        }
        graph.nodes = sol.nodes;
        graph.constant = Some(sol.constant);
        let previous = tracker.correction;
        tracker.retrack(target, index)?;
        refresh_graph(graph, tracker, index, &previous);
        sol = solve(graph, graph.constant, &cfg.solver)?;
    }
    Ok(sol)
}

/// Builds the keyframe graph over the stream and re-solves it (warm-started)
/// every `stride` keyframes, yielding an attitude series.
pub fn align_series(samples: &[ImuSample], earth: &EarthParams, cfg: &FgoConfig) -> Result<FgoRun, FgoError> {
    let mut tracker = Tracker::new(samples, *earth, cfg.keyframe_interval, BiasCorrection::default());
    let mut graph = FactorGraph::new(cfg.keyframe_interval, cfg.noise_model());
    let mut epochs = Vec::new();
    let stride = cfg.stride.max(1);
    let mut index = 0;
    while tracker.reach(index)? {
        let snaps = tracker.builder.snapshots();
        // Reaching keyframe `index` closes the interval means of its predecessor.
        if index > 0 {
            graph.keyframes[index - 1] = snaps[index - 1].clone();
        }
        graph.add_keyframe(snaps[index].clone())?;
        let t = snaps[index].t;
        if index > 0 {
            let prev = graph.nodes[index - 1].to_vector();
            let a = transition_matrix(&graph.keyframes[index - 1], cfg.keyframe_interval);
            graph.nodes[index] = NodeState::from_vector(&(a * prev));
        }
        if index == 0 || index % stride != 0 {
            index += 1;
            continue;
        }
        match solve_with_feedback(&mut graph, &mut tracker, index, cfg) {
            Ok(sol) => {
                let last = *sol.nodes.last().expect("graph is non-empty");
                let c_b_n = attitude_output(&sol.nodes, &sol.constant, &graph.keyframes[index], earth);
                let total = total_bias(&tracker.correction, &last);
                graph.nodes = sol.nodes;
                graph.constant = Some(sol.constant);
                epochs.push(FgoEpoch {
                    t,
                    c_b_n: Some(c_b_n),
                    gyro_bias: total.gyro,
                    accel_bias: total.accel,
                    report: Some(sol.report),
                });
            }
            Err(FgoError::Initialization(CoarseError::TooFewPairs(_) | CoarseError::DegenerateGeometry { .. })) => {
                epochs.push(FgoEpoch { t, c_b_n: None, gyro_bias: Vector3::zeros(), accel_bias: Vector3::zeros(), report: None });
            }
            Err(e) => return Err(e),
        }
        index += 1;
    }
    Ok(FgoRun { epochs, graph, feedback: tracker.correction })
}

/// Result of a single batch solve.
#[derive(Debug, Clone)]
pub struct FgoBatch {
    pub graph: FactorGraph,
    pub solution: Solution,
    pub feedback: BiasCorrection,
}

impl FgoBatch {
    /// Total gyro and accelerometer bias estimates at the last keyframe.
    pub fn total_bias(&self) -> BiasCorrection {
        total_bias(&self.feedback, self.solution.nodes.last().expect("batch graphs have ≥ 2 nodes"))
    }
}

/// Single batch solve over the whole stream (no intermediate epochs).
pub fn align_batch(samples: &[ImuSample], earth: &EarthParams, cfg: &FgoConfig) -> Result<FgoBatch, FgoError> {
    let mut tracker = Tracker::new(samples, *earth, cfg.keyframe_interval, BiasCorrection::default());
    let mut graph = FactorGraph::new(cfg.keyframe_interval, cfg.noise_model());
    let mut index = 0;
    while tracker.reach(index)? {
        let snaps = tracker.builder.snapshots();
        if index > 0 {
            graph.keyframes[index - 1] = snaps[index - 1].clone();
        }
        graph.add_keyframe(snaps[index].clone())?;
        index += 1;
    }
    if index < 2 {
        return Err(FgoError::TooFewKeyframes { needed: 2, got: index });
    }
    let solution = solve_with_feedback(&mut graph, &mut tracker, index - 1, cfg)?;
    Ok(FgoBatch { graph, solution, feedback: tracker.correction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::angle_between;
    use nalgebra::Matrix3;

    #[test]
    fn all_aligned_chain_is_identity() {
        let snap = KeyframeSnapshot {
            index: 0,
            t: 0.0,
            c_b_ib0: RotationMatrix::identity(),
            f_tilde: Vector3::zeros(),
            g_int: Vector3::zeros(),
            f_mean: Vector3::zeros(),
            c_mean: Matrix3::identity(),
            fc_moment: Matrix3::zeros(),
        };
        let out = attitude_output(&[NodeState::default()], &ConstantAttitude(RotationMatrix::identity()), &snap, &EarthParams::default());
        assert_eq!(out, RotationMatrix::identity());
    }

    #[test]
    fn output_is_a_rotation() {
        let snap = KeyframeSnapshot {
            index: 0,
            t: 500.0,
            c_b_ib0: so3_exp(&Vector3::new(0.1, 2.0, -1.0)),
            f_tilde: Vector3::zeros(),
            g_int: Vector3::zeros(),
            f_mean: Vector3::zeros(),
            c_mean: Matrix3::identity(),
            fc_moment: Matrix3::zeros(),
        };
        let nodes = [NodeState { phi: Vector3::new(1e-3, -2e-3, 0.01), ..Default::default() }];
        let out = attitude_output(&nodes, &ConstantAttitude(so3_exp(&Vector3::new(0.5, 0.5, 0.5))), &snap, &EarthParams::default());
        assert!(crate::rotation::orthogonality_defect(out.matrix()) < 1e-9);
        assert!((out.matrix().determinant() - 1.0).abs() < 1e-9);
        assert!(angle_between(&out, &out) == 0.0);
    }
}
