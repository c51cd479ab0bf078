//! Shared 3D types: intrinsics, depth/color frames, point clouds, rigid
//! transforms, normals and the k-d tree index.

mod cloud;
mod frame;
mod kdtree;
pub mod lie;
mod normals;
mod transform;

pub use cloud::{transform_cloud, voxel_downsample, PointCloud, Rgb, VoxelAccumulator};
pub use frame::{backproject, CameraIntrinsics, ColorFrame, DepthFrame, RgbdFrame};
pub use kdtree::{KdTree, Neighbor};
pub use normals::estimate_normals;
pub use transform::RigidTransform;

pub use nalgebra::{Point3, Vector3};
