//! Synthetic time-of-flight RGB-D sensor with ground-truth poses.

mod noise;
mod render;
mod scene;
mod sequence;
pub mod trajectory;

pub use noise::{apply_noise, NoiseModel, EDGE_JUMP_MM};
pub use render::{render_frame, render_frame_with_stats, RenderStats};
pub use scene::{
    pool_preset, preset, room_preset, scene_truth_distance, wall_preset, Hit, NamedRegion, Primitive, SceneModel,
    PRESET_NAMES,
};
pub use sequence::{generate_sequence, simulate_frames, SimulatedFrame};
pub use trajectory::{look_at, TrajectorySpec};
