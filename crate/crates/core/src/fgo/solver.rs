//! Damped Gauss-Newton over the chain-plus-hub graph.
//!
//! The normal matrix is block tridiagonal in the keyframe states with a dense
//! three-column border for the constant attitude. It is solved by block
//! elimination along the chain followed by a 3×3 Schur complement, after
//! symmetric Jacobi scaling.

use super::factors::{ins_factor, measurement_factor, prior_factor, Matrix12, NodeVector};
use super::graph::{ConstantAttitude, FactorGraph, NodeState};
use super::FgoError;
use crate::coarse::solve_wahba;
use crate::format::Sig9;
use crate::rotation::{so3_exp, Vector3};
use nalgebra::{Matrix3, SMatrix};
use std::fmt::Write as _;

type Border = SMatrix<f64, 12, 3>;
type Rhs = SMatrix<f64, 12, 4>;

pub const TRACE_CSV_HEADER: &str = "iter,cost,damping,step_norm";

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub relative_cost_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_cost_tolerance: 1e-8,
            step_tolerance: 1e-10,
            initial_damping: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub damping: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub damping_final: f64,
    /// Accepted iterations; row 0 is the starting point.
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for row in &self.trace {
            let _ = writeln!(out, "{},{},{},{}", row.iter, Sig9(row.cost), Sig9(row.damping), Sig9(row.step_norm));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub nodes: Vec<NodeState>,
    pub constant: ConstantAttitude,
    pub report: SolveReport,
}

impl FactorGraph {
    /// Total Mahalanobis cost of all factors at the given estimate.
    pub fn cost(&self, nodes: &[NodeState], c: &ConstantAttitude) -> f64 {
        let dt = self.keyframe_interval;
        let ins_w = self.noise.ins.map(|v| 1.0 / v);
        let prior_w = self.noise.prior.map(|v| 1.0 / v);
        let mut total = 0.0;
        if let Some(first) = nodes.first() {
            let (r, _) = prior_factor(first, &self.prior_mean);
            total += r.component_mul(&r).dot(&prior_w);
        }
        for k in 0..nodes.len().saturating_sub(1) {
            let (r, _, _) = ins_factor(&nodes[k], &nodes[k + 1], &self.keyframes[k], dt);
            total += r.component_mul(&r).dot(&ins_w);
        }
        for (node, snap) in nodes.iter().zip(&self.keyframes) {
            let (r, _, _) = measurement_factor(node, c, snap);
            let w = self.noise.measurement_variance(snap.t).map(|v| 1.0 / v);
            total += r.component_mul(&r).dot(&w);
        }
        total
    }
}

struct NormalEquations {
    diag: Vec<Matrix12>,
    upper: Vec<Matrix12>,
    border: Vec<Border>,
    corner: Matrix3<f64>,
    g_x: Vec<NodeVector>,
    g_r: Vector3,
}

fn assemble(graph: &FactorGraph, nodes: &[NodeState], c: &ConstantAttitude) -> NormalEquations {
    let n = nodes.len();
    let dt = graph.keyframe_interval;
    let mut eq = NormalEquations {
        diag: vec![Matrix12::zeros(); n],
        upper: vec![Matrix12::zeros(); n.saturating_sub(1)],
        border: vec![Border::zeros(); n],
        corner: Matrix3::zeros(),
        g_x: vec![NodeVector::zeros(); n],
        g_r: Vector3::zeros(),
    };

    let prior_w = Matrix12::from_diagonal(&graph.noise.prior.map(|v| 1.0 / v));
    let (r, j) = prior_factor(&nodes[0], &graph.prior_mean);
    eq.diag[0] += j.transpose() * prior_w * j;
    eq.g_x[0] -= j.transpose() * prior_w * r;

    let ins_w = Matrix12::from_diagonal(&graph.noise.ins.map(|v| 1.0 / v));
    for k in 0..n.saturating_sub(1) {
        let (r, j_k, j_next) = ins_factor(&nodes[k], &nodes[k + 1], &graph.keyframes[k], dt);
        let jkt_w = j_k.transpose() * ins_w;
        let jnt_w = j_next.transpose() * ins_w;
        eq.diag[k] += jkt_w * j_k;
        eq.diag[k + 1] += jnt_w * j_next;
        eq.upper[k] += jkt_w * j_next;
        eq.g_x[k] -= jkt_w * r;
        eq.g_x[k + 1] -= jnt_w * r;
    }

    for (k, (node, snap)) in nodes.iter().zip(&graph.keyframes).enumerate() {
        let (r, j_x, j_r) = measurement_factor(node, c, snap);
        let w = Matrix3::from_diagonal(&graph.noise.measurement_variance(snap.t).map(|v| 1.0 / v));
        let jxt_w = j_x.transpose() * w;
        let jrt_w = j_r.transpose() * w;
        eq.diag[k] += jxt_w * j_x;
        eq.border[k] += jxt_w * j_r;
        eq.corner += jrt_w * j_r;
        eq.g_x[k] -= jxt_w * r;
        eq.g_r -= jrt_w * r;
    }
    eq
}

impl NormalEquations {
    /// Solves `(H + λ·diag(H))·δ = g`.
    fn solve(&self, damping: f64) -> Option<(Vec<NodeVector>, Vector3)> {
        self.solve_once(damping, &self.g_x, &self.g_r)
    }

    /// Exact minimizer over the node states with the constant attitude held
    /// fixed (the cost is quadratic in the states).
    fn solve_states(&self) -> Option<Vec<NodeVector>> {
        let frozen = NormalEquations {
            diag: self.diag.clone(),
            upper: self.upper.clone(),
            border: vec![Border::zeros(); self.diag.len()],
            corner: Matrix3::identity(),
            g_x: self.g_x.clone(),
            g_r: Vector3::zeros(),
        };
        frozen.solve(0.0).map(|(dx, _)| dx)
    }

    fn solve_once(&self, damping: f64, g_x: &[NodeVector], g_r: &Vector3) -> Option<(Vec<NodeVector>, Vector3)> {
        let n = self.diag.len();
        let scale_of = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 };
        let sx: Vec<NodeVector> = self.diag.iter().map(|d| d.diagonal().map(scale_of)).collect();
        let sr: Vector3 = self.corner.diagonal().map(scale_of);

        let scaled = |m: &Matrix12, a: &NodeVector, b: &NodeVector| {
            Matrix12::from_fn(|i, j| m[(i, j)] * a[i] * b[j])
        };
        let lm = 1.0 + damping;

        // Forward elimination along the chain.
        let mut chol = Vec::with_capacity(n);
        let mut rhs: Vec<Rhs> = Vec::with_capacity(n);
        let mut upper_scaled = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n {
            let mut d = scaled(&self.diag[k], &sx[k], &sx[k]);
            for i in 0..12 {
                d[(i, i)] *= lm;
            }
            let mut b = Rhs::zeros();
            for i in 0..12 {
                for j in 0..3 {
                    b[(i, j)] = self.border[k][(i, j)] * sx[k][i] * sr[j];
                }
                b[(i, 3)] = g_x[k][i] * sx[k][i];
            }
            if k > 0 {
                let u: &Matrix12 = &upper_scaled[k - 1];
                let prev: &nalgebra::Cholesky<f64, nalgebra::Const<12>> = &chol[k - 1];
                let w = prev.solve(u);
                d -= u.transpose() * w;
                b -= w.transpose() * rhs[k - 1];
            }
            chol.push(d.cholesky()?);
            rhs.push(b);
            if k + 1 < n {
                upper_scaled.push(scaled(&self.upper[k], &sx[k], &sx[k + 1]));
            }
        }

        // Back substitution: y_k = D_k⁻¹(rhs_k − U_k·y_{k+1}).
        let mut y = vec![Rhs::zeros(); n];
        for k in (0..n).rev() {
            let mut b = rhs[k];
            if k + 1 < n {
                b -= upper_scaled[k] * y[k + 1];
            }
            y[k] = chol[k].solve(&b);
        }

        // Schur complement on the constant attitude.
        let mut s = Matrix3::from_fn(|i, j| self.corner[(i, j)] * sr[i] * sr[j]);
        for i in 0..3 {
            s[(i, i)] *= lm;
        }
        let mut s_rhs = g_r.component_mul(&sr);
        for k in 0..n {
            let b = Border::from_fn(|i, j| self.border[k][(i, j)] * sx[k][i] * sr[j]);
            let yb = y[k].fixed_columns::<3>(0);
            let yg = y[k].column(3);
            s -= b.transpose() * yb;
            s_rhs -= b.transpose() * yg;
        }
        let s = (s + s.transpose()) * 0.5;
        let d_r_scaled = s.cholesky()?.solve(&s_rhs);

        let dx = (0..n)
            .map(|k| {
                let yb = y[k].fixed_columns::<3>(0);
                let step: NodeVector = y[k].column(3) - yb * d_r_scaled;
                step.component_mul(&sx[k])
            })
            .collect();
        Some((dx, d_r_scaled.component_mul(&sr)))
    }
}

/// Node states minimizing the cost for a fixed constant attitude.
fn project_states(graph: &FactorGraph, nodes: &[NodeState], c: &ConstantAttitude) -> Result<Vec<NodeState>, FgoError> {
    let dx = assemble(graph, nodes, c).solve_states().ok_or(FgoError::SingularSystem)?;
    Ok(nodes.iter().zip(&dx).map(|(n, d)| NodeState::from_vector(&(n.to_vector() + d))).collect())
}

fn initial_constant(graph: &FactorGraph) -> Result<ConstantAttitude, FgoError> {
    let sol = solve_wahba(&graph.wahba_pairs())?;
    Ok(ConstantAttitude(sol.rotation))
}

/// Minimizes the total factor cost starting from the graph's node states.
///
/// When `init` is `None` the constant attitude starts from the Wahba
/// solution over the keyframe vector pairs.
pub fn solve(graph: &FactorGraph, init: Option<ConstantAttitude>, opts: &SolverOptions) -> Result<Solution, FgoError> {
    graph.noise.validate()?;
    if graph.len() < 2 {
        return Err(FgoError::TooFewKeyframes { needed: 2, got: graph.len() });
    }
    let mut constant = match init {
        Some(c) => c,
        None => initial_constant(graph)?,
    };
    let initial_cost = graph.cost(&graph.nodes, &constant);
    let mut nodes = project_states(graph, &graph.nodes, &constant)?;
    let mut cost = graph.cost(&nodes, &constant);
    let mut damping = opts.initial_damping;
    let mut trace = vec![TraceRow { iter: 0, cost, damping, step_norm: 0.0 }];
    let mut converged = false;
    let mut iterations = 0;
    let tiny_cost = 1e-24;

    while iterations < opts.max_iterations && !converged {
        iterations += 1;
        if cost <= tiny_cost {
            converged = true;
            break;
        }
        let eq = assemble(graph, &nodes, &constant);
        let mut accepted = false;
        loop {
            let Some((dx, dr)) = eq.solve(damping) else {
                damping = (damping * 10.0).max(1e-9);
                if damping > 1e12 {
                    return Err(FgoError::SingularSystem);
                }
                continue;
            };
            let step_norm = (dx.iter().map(|d| d.norm_squared()).sum::<f64>() + dr.norm_squared()).sqrt();
            let stepped: Vec<NodeState> = nodes
                .iter()
                .zip(&dx)
                .map(|(n, d)| NodeState::from_vector(&(n.to_vector() + d)))
                .collect();
            let cand_constant = ConstantAttitude(so3_exp(&dr) * constant.0);
            let cand_nodes = project_states(graph, &stepped, &cand_constant)?;
            let cand_cost = graph.cost(&cand_nodes, &cand_constant);

            if cand_cost < cost {
                let rel = (cost - cand_cost) / cost;
                nodes = cand_nodes;
                constant = cand_constant;
                cost = cand_cost;
                damping = (damping * 0.1).max(1e-12);
                trace.push(TraceRow { iter: iterations, cost, damping, step_norm });
                accepted = true;
                if rel < opts.relative_cost_tolerance || dr.norm() < opts.step_tolerance {
                    converged = true;
                }
                break;
            }
            // No decrease: either at the minimum up to rounding or the step was too long.
            if (cand_cost - cost) <= 1e-12 * cost || dr.norm() < opts.step_tolerance {
                converged = true;
                break;
            }
            damping *= 10.0;
            if damping > 1e12 {
                break;
            }
        }
        if !accepted && !converged {
            break;
        }
    }

    Ok(Solution {
        nodes,
        constant,
        report: SolveReport {
            iterations,
            initial_cost,
            final_cost: cost,
            converged,
            damping_final: damping,
            trace,
        },
    })
}
