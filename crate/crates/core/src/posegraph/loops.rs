use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use super::{EdgeKind, PoseEdge};
use crate::error::{Error, Result};
use crate::frontend::Keyframe;
use crate::registration::{register_pair, RegistrationParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopClosureParams {
    /// Minimum separation in keyframe positions.
    pub min_index_gap: usize,
    /// Keyframes whose estimated camera centers are farther apart are skipped.
    pub candidate_radius: f64,
    pub information_scale: f64,
    /// Odometry edge weight, kept here so all graph weights sit together.
    pub odometry_information_scale: f64,
}

impl Default for LoopClosureParams {
    fn default() -> Self {
        Self {
            min_index_gap: 10,
            candidate_radius: 0.5,
            information_scale: 0.5,
            odometry_information_scale: 1.0,
        }
    }
}

impl LoopClosureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.candidate_radius >= 0.0 && self.information_scale > 0.0 && self.odometry_information_scale > 0.0) {
            return Err(Error::Parameter("loop closure radius and weights must be positive".into()));
        }
        Ok(())
    }
}

/// Registers every sufficiently separated, nearby keyframe pair and returns
/// the converged registrations as loop-closure edges between keyframe
/// positions `(i, j)` with `i < j`.
pub fn detect_loop_closures(keyframes: &[Keyframe], params: &LoopClosureParams, registration: &RegistrationParams) -> Result<Vec<PoseEdge>> {
    params.validate()?;
    let mut pairs = Vec::new();
    for j in 0..keyframes.len() {
        for i in 0..j {
            if j - i < params.min_index_gap.max(1) {
                continue;
            }
            let d = (keyframes[i].pose.translation() - keyframes[j].pose.translation()).norm();
            if d <= params.candidate_radius {
                pairs.push((i, j));
            }
        }
    }
    use rayon::prelude::*;
    let edges = pairs
        .par_iter()
        .filter_map(|&(i, j)| {
            let reg = register_pair(&keyframes[j].features, &keyframes[i].features, registration).ok()?;
            reg.result.converged.then(|| {
                PoseEdge::new(
                    i,
                    j,
                    reg.result.transform,
                    Matrix6::identity() * params.information_scale,
                    EdgeKind::LoopClosure,
                )
            })
        })
        .collect();
    Ok(edges)
}
