//! Sequential tracking: register each frame against the last keyframe,
//! gate implausible motion, select keyframes and accumulate the map.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, PointCloud, RgbdFrame, RigidTransform, VoxelAccumulator};
use crate::registration::{prepare_frame, register_pair, FrameFeatures, PairRegistration, RegistrationParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeParams {
    pub translation: f64,
    pub rotation_deg: f64,
    /// A new keyframe is also taken when RANSAC inliers drop below
    /// `inlier_factor × min_inliers`.
    pub inlier_factor: f64,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        Self {
            translation: 0.25,
            rotation_deg: 15.0,
            inlier_factor: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendParams {
    pub keyframe: KeyframeParams,
    /// Largest plausible motion between consecutive tracked frames.
    pub gate_translation: f64,
    pub gate_rotation_deg: f64,
    /// Largest change ICP may apply to the RANSAC estimate.
    pub max_icp_correction: f64,
    pub max_icp_correction_deg: f64,
    /// ICP results with a larger point-to-plane rmse count as diverged.
    pub max_icp_rmse: f64,
    /// Frames with fewer described keypoints are lost.
    pub min_keypoints: usize,
    pub map_voxel: f64,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self {
            keyframe: KeyframeParams::default(),
            gate_translation: 0.5,
            gate_rotation_deg: 30.0,
            max_icp_correction: 0.25,
            max_icp_correction_deg: 15.0,
            max_icp_rmse: 0.015,
            min_keypoints: 10,
            map_voxel: 0.005,
        }
    }
}

impl FrontendParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.keyframe.translation,
            self.keyframe.rotation_deg,
            self.gate_translation,
            self.gate_rotation_deg,
            self.max_icp_correction,
            self.max_icp_correction_deg,
            self.max_icp_rmse,
            self.map_voxel,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.keyframe.inlier_factor >= 0.0) {
            return Err(Error::Parameter("frontend thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Tracking,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    NoKeypoints,
    MatchFailure,
    IcpDivergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStatus {
    pub state: TrackState,
    /// Set exactly when `state` is `Lost`.
    pub reason: Option<LossReason>,
}

impl TrackStatus {
    pub fn tracking() -> Self {
        Self {
            state: TrackState::Tracking,
            reason: None,
        }
    }

    pub fn lost(reason: LossReason) -> Self {
        Self {
            state: TrackState::Lost,
            reason: Some(reason),
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.state == TrackState::Tracking
    }
}

#[derive(Clone, Debug)]
pub struct Keyframe {
    pub frame_index: usize,
    /// Camera-to-world.
    pub pose: RigidTransform,
    pub features: FrameFeatures,
}

/// Per-frame tracking outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Camera-to-world; `None` while lost.
    pub pose: Option<RigidTransform>,
    pub status: TrackStatus,
    pub is_keyframe: bool,
    /// Frame index of the keyframe this frame was registered against.
    pub reference_keyframe: Option<usize>,
    pub keypoints: usize,
    pub described: usize,
    pub matches: usize,
    pub inliers: usize,
    pub registration: Option<PairRegistration>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct MapState {
    pub params: FrontendParams,
    pub registration: RegistrationParams,
    pub keyframes: Vec<Keyframe>,
    /// One record per processed frame, in order.
    pub trajectory: Vec<FrameRecord>,
    map: VoxelAccumulator,
    status: TrackStatus,
    last_tracked: Option<RigidTransform>,
    /// Last tracked frame that is not a keyframe, kept as a fallback reference.
    previous: Option<Keyframe>,
}

/// Decides whether a successfully registered frame becomes a keyframe.
pub fn keyframe_policy(params: &KeyframeParams, keyframe_pose: &RigidTransform, pose: &RigidTransform, inliers: usize, min_inliers: usize) -> bool {
    let (dt, dr) = keyframe_pose.distance_to(pose);
    dt > params.translation || dr > params.rotation_deg.to_radians() || (inliers as f64) < params.inlier_factor * min_inliers as f64
}

impl MapState {
    pub fn new(params: FrontendParams, registration: RegistrationParams) -> Result<Self> {
        params.validate()?;
        let map = VoxelAccumulator::new(params.map_voxel)?;
        Ok(Self {
            params,
            registration,
            keyframes: Vec::new(),
            trajectory: Vec::new(),
            map,
            status: TrackStatus::tracking(),
            last_tracked: None,
            previous: None,
        })
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    pub fn map_cloud(&self) -> PointCloud {
        self.map.to_cloud()
    }

    pub fn map_len(&self) -> usize {
        self.map.len()
    }

    /// Merges a camera-frame cloud at `pose` into the map.
    pub fn accumulate_map(&mut self, cloud: &PointCloud, pose: &RigidTransform) {
        if !self.status.is_tracking() {
            return;
        }
        self.map.insert(&transform_cloud(cloud, pose));
    }

    /// Preprocesses and tracks one frame.
    pub fn process_frame(&mut self, frame: &RgbdFrame) -> Result<&FrameRecord> {
        let start = Instant::now();
        let features = prepare_frame(frame, &self.registration)?;
        let pre_ms = start.elapsed().as_secs_f64() * 1e3;
        self.process_prepared(frame.frame_index, features, pre_ms)
    }

    /// Tracks a frame whose features were computed ahead of time.
    /// `extra_ms` is added to the recorded processing time.
    pub fn process_prepared(&mut self, frame_index: usize, features: FrameFeatures, extra_ms: f64) -> Result<&FrameRecord> {
        if let Some(last) = self.trajectory.last() {
            if frame_index <= last.frame_index {
                return Err(Error::Parameter(format!(
                    "frame {frame_index} does not follow frame {}",
                    last.frame_index
                )));
            }
        }
        let start = Instant::now();
        let mut record = FrameRecord {
            frame_index,
            pose: None,
            status: TrackStatus::tracking(),
            is_keyframe: false,
            reference_keyframe: None,
            keypoints: features.detected,
            described: features.descriptors.len(),
            matches: 0,
            inliers: 0,
            registration: None,
            elapsed_ms: 0.0,
        };

        if self.keyframes.is_empty() {
            let pose = RigidTransform::identity();
            record.pose = Some(pose);
            record.is_keyframe = true;
            self.status = TrackStatus::tracking();
            self.accumulate_map(&features.cloud, &pose);
            self.last_tracked = Some(pose);
            self.keyframes.push(Keyframe {
                frame_index,
                pose,
                features,
            });
            record.elapsed_ms = extra_ms + start.elapsed().as_secs_f64() * 1e3;
            self.trajectory.push(record);
            return Ok(self.trajectory.last().expect("just pushed"));
        }

        let keyframe = self.keyframes.last().expect("non-empty");
        record.reference_keyframe = Some(keyframe.frame_index);
        let mut outcome = self.track(keyframe, &features, &mut record);
        if matches!(outcome, Err(LossReason::MatchFailure | LossReason::IcpDivergence)) && self.status.is_tracking() {
            if let Some(prev) = self.previous.take() {
                // retry against the previous tracked frame and promote it
                let mut retry = record.clone();
                retry.reference_keyframe = Some(prev.frame_index);
                let second = self.track(&prev, &features, &mut retry);
                if second.is_ok() {
                    log::debug!("frame {frame_index}: promoting frame {} to keyframe", prev.frame_index);
                    if let Some(r) = self.trajectory.iter_mut().rev().find(|r| r.frame_index == prev.frame_index) {
                        r.is_keyframe = true;
                    }
                    self.keyframes.push(prev);
                    record = retry;
                    outcome = second;
                }
            }
        }
        match outcome {
            Ok(pose) => {
                let kf_pose = self.keyframes.last().expect("non-empty").pose;
                self.status = TrackStatus::tracking();
                record.pose = Some(pose);
                self.accumulate_map(&features.cloud, &pose);
                self.last_tracked = Some(pose);
                let min_inliers = self.registration.ransac.min_inliers;
                let frame = Keyframe {
                    frame_index,
                    pose,
                    features,
                };
                if keyframe_policy(&self.params.keyframe, &kf_pose, &pose, record.inliers, min_inliers) {
                    record.is_keyframe = true;
                    self.keyframes.push(frame);
                    self.previous = None;
                } else {
                    self.previous = Some(frame);
                }
            }
            Err(reason) => {
                self.status = TrackStatus::lost(reason);
                self.previous = None;
                log::debug!("frame {frame_index} lost: {reason:?}");
            }
        }
        record.status = self.status;
        record.elapsed_ms = extra_ms + start.elapsed().as_secs_f64() * 1e3;
        self.trajectory.push(record);
        Ok(self.trajectory.last().expect("just pushed"))
    }

    fn track(&self, keyframe: &Keyframe, features: &FrameFeatures, record: &mut FrameRecord) -> Result<RigidTransform, LossReason> {
        if features.descriptors.len() < self.params.min_keypoints {
            return Err(LossReason::NoKeypoints);
        }
        let reg = register_pair(features, &keyframe.features, &self.registration).map_err(|_| LossReason::MatchFailure)?;
        record.matches = reg.matches;
        record.inliers = reg.coarse.inlier_count;
        let (dt, dr) = reg.coarse.transform.distance_to(&reg.result.transform);
        let diverged = !reg.result.converged
            || reg.result.rmse > self.params.max_icp_rmse
            || dt > self.params.max_icp_correction
            || dr > self.params.max_icp_correction_deg.to_radians();
        let pose = keyframe.pose.compose(&reg.result.transform);
        record.registration = Some(reg);
        if diverged {
            return Err(LossReason::IcpDivergence);
        }
        // consecutive tracked frames are gated against each other, a
        // relocalizing frame against its keyframe
        let reference = if self.status.is_tracking() {
            self.last_tracked.unwrap_or(keyframe.pose)
        } else {
            keyframe.pose
        };
        let (gt, gr) = reference.distance_to(&pose);
        if gt > self.params.gate_translation || gr > self.params.gate_rotation_deg.to_radians() {
            return Err(LossReason::IcpDivergence);
        }
        Ok(pose)
    }
}
