//! Pairwise alignment: descriptor matching, RANSAC over SVD hypotheses and
//! point-to-plane ICP refinement.

mod absolute;
mod icp;
mod matching;
mod pair;
mod ransac;

use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;

pub use absolute::estimate_transform_svd;
pub use icp::{icp_point_to_plane, IcpParams};
pub use matching::{match_descriptors, Correspondence, MatchParams};
pub use pair::{prepare_frame, register_pair, FrameFeatures, PairRegistration, PreprocessParams, RegistrationParams};
pub use ransac::{robust_coarse_align, RansacParams};

/// Outcome of an alignment stage. `transform` maps source coordinates into
/// the target frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub inlier_count: usize,
    /// Root mean square residual over the inlier pairs (m).
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// ICP only: the linear system was rank deficient and a minimum-norm
    /// step was taken.
    #[serde(default)]
    pub degenerate: bool,
    /// ICP only: mean squared point-to-plane residual after each accepted
    /// iteration, starting with the initial pose.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
}
