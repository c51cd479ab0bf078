use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;

/// Camera-to-world pose at `eye` looking at `target`, world z up, camera
/// x right, y down, z forward.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> RigidTransform {
    let forward = (target - eye).normalize();
    let up = Vector3::z();
    let right = {
        let r = forward.cross(&up);
        if r.norm() < 1e-9 {
            // looking straight up or down
            Vector3::x()
        } else {
            r.normalize()
        }
    };
    let down = forward.cross(&right);
    let rot = Matrix3::from_columns(&[right, down, forward]);
    RigidTransform::from_matrix(&rot, eye.coords)
}

/// Scripted camera motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Poses {
        poses: Vec<RigidTransform>,
    },
    /// Camera on a horizontal circle around `center`, looking at `target`
    /// (inward) or away from the center (outward).
    Orbit {
        center: [f64; 3],
        radius: f64,
        start_angle_deg: f64,
        angular_step_deg: f64,
        count: usize,
        target: [f64; 3],
    },
    /// Constant-orientation scan between two eye positions, looking along `direction`.
    Linear {
        start: [f64; 3],
        end: [f64; 3],
        direction: [f64; 3],
        count: usize,
    },
}

impl TrajectorySpec {
    /// Inward-looking orbit used by the room preset.
    pub fn room_orbit(count: usize) -> Self {
        TrajectorySpec::Orbit {
            center: [0.0, 0.0, 1.45],
            radius: 1.3,
            start_angle_deg: -90.0,
            angular_step_deg: 2.0,
            count,
            target: [0.0, 0.0, 0.9],
        }
    }

    pub fn poses(&self) -> Vec<RigidTransform> {
        match self {
            TrajectorySpec::Poses { poses } => poses.clone(),
            TrajectorySpec::Orbit {
                center,
                radius,
                start_angle_deg,
                angular_step_deg,
                count,
                target,
            } => (0..*count)
                .map(|i| {
                    let a = (start_angle_deg + angular_step_deg * i as f64).to_radians();
                    let eye = Point3::new(center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]);
                    look_at(eye, Point3::new(target[0], target[1], target[2]))
                })
                .collect(),
            TrajectorySpec::Linear {
                start,
                end,
                direction,
                count,
            } => {
                let s = Point3::new(start[0], start[1], start[2]);
                let e = Point3::new(end[0], end[1], end[2]);
                let d = Vector3::new(direction[0], direction[1], direction[2]);
                (0..*count)
                    .map(|i| {
                        let f = if *count > 1 { i as f64 / (*count - 1) as f64 } else { 0.0 };
                        let eye = s + (e - s) * f;
                        look_at(eye, eye + d)
                    })
                    .collect()
            }
        }
    }
}

/// Consecutive pose pairs exceeding the motion gate `(meters, radians)`.
pub fn gate_violations(poses: &[RigidTransform], max_translation: f64, max_rotation: f64) -> Vec<usize> {
    poses
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let (dt, dr) = w[0].distance_to(&w[1]);
            (dt > max_translation || dr > max_rotation).then_some(i + 1)
        })
        .collect()
}
