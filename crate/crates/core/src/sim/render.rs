use nalgebra::Vector3;
use rayon::prelude::*;

use super::SceneModel;
use crate::geometry::{CameraIntrinsics, ColorFrame, DepthFrame, RgbdFrame, RigidTransform};

/// Per-frame render diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Pixels whose ray hit a surface.
    pub hits: usize,
    /// Hits whose depth fell outside the sensor range.
    pub clipped: usize,
}

/// Noise-free ray cast of `scene` from a camera-to-world `pose`.
pub fn render_frame(scene: &SceneModel, pose: &RigidTransform, intrinsics: &CameraIntrinsics) -> RgbdFrame {
    render_frame_with_stats(scene, pose, intrinsics, 0, 0.0).0
}

pub fn render_frame_with_stats(
    scene: &SceneModel,
    pose: &RigidTransform,
    intrinsics: &CameraIntrinsics,
    frame_index: usize,
    timestamp: f64,
) -> (RgbdFrame, RenderStats) {
    let k = *intrinsics;
    let origin = nalgebra::Point3::from(pose.translation());
    let rows: Vec<(Vec<u16>, Vec<[u8; 3]>, RenderStats)> = (0..k.height)
        .into_par_iter()
        .map(|v| {
            let mut depth = vec![0u16; k.width];
            let mut rgb = vec![[0u8; 3]; k.width];
            let mut stats = RenderStats::default();
            for u in 0..k.width {
                // camera ray with unit z component, so the hit parameter is the depth
                let ray_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                let dir = pose.apply_vector(&ray_cam);
                if let Some(hit) = scene.intersect(&origin, &dir) {
                    stats.hits += 1;
                    if hit.t < k.depth_min || hit.t > k.depth_max {
                        stats.clipped += 1;
                        continue;
                    }
                    depth[u] = (hit.t * 1000.0).round() as u16;
                    rgb[u] = hit.albedo;
                }
            }
            (depth, rgb, stats)
        })
        .collect();
    let mut depth = Vec::with_capacity(k.pixel_count());
    let mut rgb = Vec::with_capacity(k.pixel_count());
    let mut stats = RenderStats::default();
    for (d, c, s) in rows {
        depth.extend(d);
        rgb.extend(c);
        stats.hits += s.hits;
        stats.clipped += s.clipped;
    }
    let depth = DepthFrame {
        intrinsics: k,
        depth,
        timestamp,
    };
    let color = ColorFrame {
        width: k.width,
        height: k.height,
        rgb,
        timestamp,
    };
    (
        RgbdFrame {
            depth,
            color: Some(color),
            frame_index,
        },
        stats,
    )
}
