//! File formats: sequence directories, TUM trajectories, PLY clouds and the
//! pipeline configuration.

pub mod config;
pub mod ply;
mod png_io;
pub mod sequence;
pub mod trajectory;

pub use config::PipelineConfig;
pub use png_io::{read_color_png, read_depth_png, write_color_png, write_depth_png};
pub use ply::{read_ply, write_ply};
pub use sequence::{read_sequence, Sequence};
pub use trajectory::{read_trajectory, write_trajectory, StampedPose};
