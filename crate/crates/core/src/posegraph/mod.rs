//! Keyframe pose graph: odometry and loop-closure constraints, robust
//! Levenberg-Marquardt optimization and a g2o-style text format.

mod graph_io;
mod loops;
mod optimize;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::lie::{self, Twist};
use crate::geometry::RigidTransform;

pub use graph_io::{format_graph, parse_graph, read_graph, write_graph};
pub use loops::{detect_loop_closures, LoopClosureParams};
pub use optimize::{edge_jacobians, optimize_graph, OptimizeParams, OptimizeReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Odometry,
    LoopClosure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNode {
    /// Frame index of the keyframe this node stands for.
    pub keyframe_index: usize,
    /// Camera-to-world pose.
    pub pose: RigidTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEdge {
    pub from: usize,
    pub to: usize,
    /// Expected `pose_from⁻¹ ∘ pose_to`.
    pub measurement: RigidTransform,
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
}

impl PoseEdge {
    pub fn new(from: usize, to: usize, measurement: RigidTransform, information: Matrix6<f64>, kind: EdgeKind) -> Self {
        Self {
            from,
            to,
            measurement,
            information,
            kind,
        }
    }

    /// Residual twist `log(Z⁻¹ ∘ Xi⁻¹ ∘ Xj)`.
    pub fn residual(&self, from: &RigidTransform, to: &RigidTransform) -> Twist {
        let error = self.measurement.inverse().compose(&from.inverse()).compose(to);
        lie::log(&error)
    }

    /// Information-weighted residual norm `sqrt(rᵀ Ω r)`.
    pub fn weighted_norm(&self, r: &Twist) -> f64 {
        (r.transpose() * self.information * r)[(0, 0)].max(0.0).sqrt()
    }

    pub fn validate(&self, node_count: usize) -> Result<()> {
        if self.from >= node_count || self.to >= node_count {
            return Err(Error::Parameter(format!(
                "edge {}->{} references a missing node ({node_count} nodes)",
                self.from, self.to
            )));
        }
        if self.from == self.to {
            return Err(Error::Parameter(format!("edge {0}->{0} is a self loop", self.from)));
        }
        let info = &self.information;
        let asym = (info - info.transpose()).abs().max();
        if !info.iter().all(|v| v.is_finite()) || asym > 1e-9 * info.abs().max().max(1.0) {
            return Err(Error::Parameter(format!("edge {}->{} information is not symmetric", self.from, self.to)));
        }
        if info.cholesky().is_none() {
            return Err(Error::Parameter(format!(
                "edge {}->{} information is not positive definite",
                self.from, self.to
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    /// Node 0 is held fixed during optimization.
    pub nodes: Vec<PoseNode>,
    pub edges: Vec<PoseEdge>,
}

impl PoseGraph {
    pub fn add_node(&mut self, keyframe_index: usize, pose: RigidTransform) -> usize {
        self.nodes.push(PoseNode { keyframe_index, pose });
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, edge: PoseEdge) -> Result<()> {
        edge.validate(self.nodes.len())?;
        self.edges.push(edge);
        Ok(())
    }

    pub fn node_by_keyframe(&self, keyframe_index: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.keyframe_index == keyframe_index)
    }

    pub fn poses(&self) -> Vec<RigidTransform> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Connectivity("graph has no nodes".into()));
        }
        for e in &self.edges {
            e.validate(self.nodes.len())?;
        }
        let unreached = self.unreachable_nodes();
        if !unreached.is_empty() {
            return Err(Error::Connectivity(format!("nodes {unreached:?} are not connected to node 0")));
        }
        Ok(())
    }

    fn unreachable_nodes(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..n).filter(|&i| !seen[i]).collect()
    }

    /// Weighted residual norm of every edge at the current poses.
    pub fn edge_residual_norms(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| e.weighted_norm(&e.residual(&self.nodes[e.from].pose, &self.nodes[e.to].pose)))
            .collect()
    }
}
