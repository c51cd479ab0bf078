use nalgebra::{DMatrix, DVector, Matrix6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PoseEdge, PoseGraph};
use crate::error::{Error, Result};
use crate::geometry::lie::{self, Twist};
use crate::geometry::RigidTransform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeParams {
    pub max_iterations: usize,
    /// Huber threshold on the weighted residual norm.
    pub huber_delta: f64,
    /// Plain least squares when false.
    pub robust: bool,
    /// Stop once the step norm or the relative cost decrease drops below this.
    pub convergence_eps: f64,
    pub initial_lambda: f64,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            huber_delta: 0.1,
            robust: true,
            convergence_eps: 1e-10,
            initial_lambda: 1e-4,
        }
    }
}

impl OptimizeParams {
    pub fn validate(&self) -> Result<()> {
        if self.robust && !(self.huber_delta > 0.0) {
            return Err(Error::Parameter("huber_delta must be positive".into()));
        }
        if !(self.convergence_eps >= 0.0 && self.initial_lambda > 0.0) {
            return Err(Error::Parameter("convergence_eps must be >= 0 and initial_lambda > 0".into()));
        }
        Ok(())
    }

    /// Robustified cost `ρ(s)` and IRLS weight `ρ'(s)` for `s = rᵀΩr`.
    fn kernel(&self, s: f64) -> (f64, f64) {
        let norm = s.sqrt();
        if !self.robust || norm <= self.huber_delta {
            (s, 1.0)
        } else {
            (2.0 * self.huber_delta * norm - self.huber_delta * self.huber_delta, self.huber_delta / norm)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Weighted residual norm per edge after optimization.
    pub edge_residuals: Vec<f64>,
    pub max_residual_edge: Option<usize>,
}

/// Jacobians of the edge residual with respect to right-multiplied twist
/// increments `X ← X ∘ exp(δ)` of the `from` and `to` poses.
pub fn edge_jacobians(edge: &PoseEdge, from: &RigidTransform, to: &RigidTransform) -> (Matrix6<f64>, Matrix6<f64>) {
    let r = edge.residual(from, to);
    let jr_inv = lie::se3_right_jacobian_inv(&r);
    let j_from = -jr_inv * lie::adjoint(&to.inverse().compose(from));
    (j_from, jr_inv)
}

fn total_cost(graph: &PoseGraph, params: &OptimizeParams) -> f64 {
    0.5 * graph
        .edges
        .iter()
        .map(|e| {
            let r = e.residual(&graph.nodes[e.from].pose, &graph.nodes[e.to].pose);
            params.kernel((r.transpose() * e.information * r)[(0, 0)].max(0.0)).0
        })
        .sum::<f64>()
}

struct Linearized {
    from: usize,
    to: usize,
    j_from: Matrix6<f64>,
    j_to: Matrix6<f64>,
    info: Matrix6<f64>,
    r: Twist,
}

fn linearize(graph: &PoseGraph, params: &OptimizeParams) -> Vec<Linearized> {
    graph
        .edges
        .par_iter()
        .map(|e| {
            let (xi, xj) = (&graph.nodes[e.from].pose, &graph.nodes[e.to].pose);
            let r = e.residual(xi, xj);
            let (_, w) = params.kernel((r.transpose() * e.information * r)[(0, 0)].max(0.0));
            let (j_from, j_to) = edge_jacobians(e, xi, xj);
            Linearized {
                from: e.from,
                to: e.to,
                j_from,
                j_to,
                info: e.information * w,
                r,
            }
        })
        .collect()
}

/// Normal equations over nodes 1..n (node 0 is the gauge).
fn normal_equations(n: usize, lin: &[Linearized]) -> (DMatrix<f64>, DVector<f64>) {
    let dim = 6 * (n - 1);
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for l in lin {
        let blocks = [(l.from, l.j_from), (l.to, l.j_to)];
        for &(a, ja) in &blocks {
            if a == 0 {
                continue;
            }
            let ja_t_info = ja.transpose() * l.info;
            let ga = ja_t_info * l.r;
            let mut gv = g.fixed_rows_mut::<6>(6 * (a - 1));
            gv += ga;
            for &(b, jb) in &blocks {
                if b == 0 {
                    continue;
                }
                let mut hv = h.fixed_view_mut::<6, 6>(6 * (a - 1), 6 * (b - 1));
                hv += ja_t_info * jb;
            }
        }
    }
    (h, g)
}

/// Robust Levenberg-Marquardt on the pose graph. Steps are accepted only if
/// the robustified cost does not increase. Node 0 stays fixed.
pub fn optimize_graph(graph: &PoseGraph, params: &OptimizeParams) -> Result<(PoseGraph, OptimizeReport)> {
    params.validate()?;
    graph.validate()?;
    let mut current = graph.clone();
    let n = current.nodes.len();
    let mut cost = total_cost(&current, params);
    let mut report = OptimizeReport {
        iterations: 0,
        converged: false,
        initial_cost: cost,
        final_cost: cost,
        cost_history: vec![cost],
        edge_residuals: Vec::new(),
        max_residual_edge: None,
    };
    let mut lambda = params.initial_lambda;
    if n > 1 {
        'outer: for iter in 0..params.max_iterations {
            report.iterations = iter + 1;
            let lin = linearize(&current, params);
            let (h, g) = normal_equations(n, &lin);
            loop {
                let mut damped = h.clone();
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda * (h[(i, i)] + 1e-9);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    if lambda > 1e12 {
                        break 'outer;
                    }
                    continue;
                };
                let delta = chol.solve(&(-&g));
                let mut trial = current.clone();
                for k in 1..n {
                    let d = Twist::from_iterator(delta.rows(6 * (k - 1), 6).iter().copied());
                    trial.nodes[k].pose = trial.nodes[k].pose.compose(&lie::exp(&d));
                }
                let trial_cost = total_cost(&trial, params);
                if trial_cost <= cost {
                    let decrease = cost - trial_cost;
                    let step = delta.norm();
                    current = trial;
                    let prev = cost;
                    cost = trial_cost;
                    report.cost_history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    if step < params.convergence_eps || decrease <= params.convergence_eps * prev {
                        report.converged = true;
                        break 'outer;
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e12 {
                    // no descent direction left at any damping
                    report.converged = true;
                    break 'outer;
                }
            }
        }
    } else {
        report.converged = true;
    }
    report.final_cost = cost;
    report.edge_residuals = current.edge_residual_norms();
    report.max_residual_edge = report
        .edge_residuals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    Ok((current, report))
}
