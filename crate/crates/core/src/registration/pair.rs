use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{icp_point_to_plane, match_descriptors, robust_coarse_align, IcpParams, MatchParams, RansacParams, RegistrationResult};
use crate::descriptors::{describe_keypoints, CShotDescriptor, DescriptorParams};
use crate::error::{Error, Result};
use crate::geometry::{backproject, estimate_normals, voxel_downsample, PointCloud, RgbdFrame};
use crate::keypoints::{frame_keypoints, DetectorParams, Keypoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    /// Voxel edge (m) for the cloud used by ICP and description.
    pub voxel_size: f64,
    /// Neighbors used for normal estimation.
    pub normal_neighbors: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.01,
            normal_neighbors: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    pub preprocess: PreprocessParams,
    pub detector: DetectorParams,
    pub descriptor: DescriptorParams,
    pub matching: MatchParams,
    pub ransac: RansacParams,
    pub icp: IcpParams,
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.preprocess.voxel_size > 0.0 && self.preprocess.voxel_size.is_finite()) {
            return Err(Error::Parameter("preprocess.voxel_size must be positive".into()));
        }
        if self.preprocess.normal_neighbors < 3 {
            return Err(Error::Parameter("preprocess.normal_neighbors must be at least 3".into()));
        }
        if self.detector.octaves == 0 || !(self.detector.nonmax_radius >= 0.0) {
            return Err(Error::Parameter("detector needs octaves >= 1 and nonmax_radius >= 0".into()));
        }
        if !(self.matching.ratio > 0.0 && self.matching.ratio <= 1.0) {
            return Err(Error::Parameter("matching.ratio must lie in (0, 1]".into()));
        }
        self.descriptor.validate()?;
        self.ransac.validate()?;
        self.icp.validate()
    }
}

/// Everything registration needs from one frame, in camera coordinates.
#[derive(Clone, Debug, Default)]
pub struct FrameFeatures {
    /// Voxel-downsampled cloud with normals (and colors when available).
    pub cloud: PointCloud,
    /// Described keypoints; `descriptors[i]` belongs to `keypoints[i]`.
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<CShotDescriptor>,
    /// Keypoints found before description dropped any.
    pub detected: usize,
}

impl FrameFeatures {
    pub fn keypoint_positions(&self) -> Vec<Point3<f64>> {
        self.keypoints.iter().map(|k| k.position).collect()
    }
}

pub fn prepare_frame(frame: &RgbdFrame, params: &RegistrationParams) -> Result<FrameFeatures> {
    let depth = if params.detector.median_filter {
        frame.depth.median_filtered()
    } else {
        frame.depth.clone()
    };
    let color = if params.descriptor.use_color { frame.color.as_ref() } else { None };
    let raw = backproject(&depth, color)?;
    let cloud = voxel_downsample(&raw, params.preprocess.voxel_size)?;
    if cloud.len() <= params.preprocess.normal_neighbors {
        return Ok(FrameFeatures {
            cloud: PointCloud {
                normals: Some(Vec::new()),
                ..PointCloud::default()
            },
            ..FrameFeatures::default()
        });
    }
    let normals = estimate_normals(&cloud, params.preprocess.normal_neighbors)?;
    let cloud = cloud.with_normals(&normals);
    let detector = DetectorParams {
        median_filter: false,
        ..params.detector.clone()
    };
    let keypoints = frame_keypoints(&depth, &detector)?;
    let detected = keypoints.len();
    let positions: Vec<Point3<f64>> = keypoints.iter().map(|k| k.position).collect();
    let described = describe_keypoints(&positions, &cloud, &params.descriptor)?;
    let (keypoints, descriptors) = keypoints
        .into_iter()
        .zip(described)
        .filter_map(|(k, d)| d.map(|d| (k, d)))
        .unzip();
    Ok(FrameFeatures {
        cloud,
        keypoints,
        descriptors,
        detected,
    })
}

/// Coarse and fine stage outcomes of one pairwise registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRegistration {
    /// Final estimate; converged only if both stages converged.
    pub result: RegistrationResult,
    pub coarse: RegistrationResult,
    pub matches: usize,
}

/// Match, RANSAC, then ICP seeded with the RANSAC estimate. The transform
/// maps `source` camera coordinates into the `target` camera frame.
pub fn register_pair(source: &FrameFeatures, target: &FrameFeatures, params: &RegistrationParams) -> Result<PairRegistration> {
    if source.descriptors.is_empty() || target.descriptors.is_empty() {
        return Err(Error::AlignmentFailed("a frame has no described keypoints".into()));
    }
    let corrs = match_descriptors(&source.descriptors, &target.descriptors, &params.matching)?;
    let coarse = robust_coarse_align(
        &corrs,
        &source.keypoint_positions(),
        &target.keypoint_positions(),
        &params.ransac,
    )?;
    let mut fine = icp_point_to_plane(&source.cloud, &target.cloud, &coarse.transform, &params.icp)?;
    fine.converged &= coarse.converged;
    Ok(PairRegistration {
        result: fine,
        coarse,
        matches: corrs.len(),
    })
}
