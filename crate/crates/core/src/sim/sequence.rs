use std::path::Path;

use rayon::prelude::*;

use super::{apply_noise, render_frame_with_stats, NoiseModel, SceneModel, TrajectorySpec};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RgbdFrame, RigidTransform};
use crate::io::sequence::{frame_timestamp, write_frame, write_intrinsics, GROUNDTRUTH_FILE, INTRINSICS_FILE, SCENE_FILE};
use crate::io::trajectory::{write_trajectory, StampedPose};

#[derive(Clone, Debug)]
pub struct SimulatedFrame {
    pub frame: RgbdFrame,
    pub ground_truth: RigidTransform,
}

/// Renders and noises every pose of `trajectory` in memory. With `darkness`
/// set the color frames are omitted.
pub fn simulate_frames(
    scene: &SceneModel,
    trajectory: &TrajectorySpec,
    noise: &NoiseModel,
    intrinsics: &CameraIntrinsics,
    darkness: bool,
) -> Vec<SimulatedFrame> {
    let poses = trajectory.poses();
    poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (clean, _) = render_frame_with_stats(scene, pose, intrinsics, i, frame_timestamp(i));
            let mut frame = apply_noise(&clean, noise);
            if darkness {
                frame.color = None;
            }
            SimulatedFrame {
                frame,
                ground_truth: *pose,
            }
        })
        .collect()
}

/// Writes a full sequence directory (frames, intrinsics, ground truth and the
/// scene description) and returns the number of frames.
pub fn generate_sequence(
    scene: &SceneModel,
    trajectory: &TrajectorySpec,
    noise: &NoiseModel,
    intrinsics: &CameraIntrinsics,
    darkness: bool,
    out: &Path,
) -> Result<usize> {
    scene.validate()?;
    noise.validate()?;
    intrinsics.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let gates = super::trajectory::gate_violations(&trajectory.poses(), 0.5, 30f64.to_radians());
    if !gates.is_empty() {
        log::warn!("trajectory exceeds the front-end motion gate at poses {gates:?}");
    }
    let frames = simulate_frames(scene, trajectory, noise, intrinsics, darkness);
    write_intrinsics(&out.join(INTRINSICS_FILE), intrinsics)?;
    frames.par_iter().try_for_each(|f| write_frame(out, &f.frame))?;
    let gt: Vec<StampedPose> = frames
        .iter()
        .map(|f| StampedPose {
            timestamp: frame_timestamp(f.frame.frame_index),
            pose: f.ground_truth,
        })
        .collect();
    write_trajectory(&out.join(GROUNDTRUTH_FILE), &gt)?;
    scene.save(&out.join(SCENE_FILE))?;
    Ok(frames.len())
}
