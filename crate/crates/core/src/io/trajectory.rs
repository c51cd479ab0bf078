//! TUM RGB-D trajectory files: `timestamp tx ty tz qx qy qz qw` per line,
//! camera-to-world.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

#[derive(Clone, Debug, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: RigidTransform,
}

pub fn format_trajectory(poses: &[StampedPose]) -> String {
    let mut out = String::new();
    for sp in poses {
        let (t, q) = sp.pose.to_tum();
        writeln!(
            out,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            sp.timestamp, t[0], t[1], t[2], q[0], q[1], q[2], q[3]
        )
        .unwrap();
    }
    out
}

pub fn write_trajectory(path: &Path, poses: &[StampedPose]) -> Result<()> {
    std::fs::write(path, format_trajectory(poses)).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Vec<StampedPose>> {
    let mut out: Vec<StampedPose> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: &str| Error::format(path, format!("line {}: {msg}", lineno + 1));
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail("non-numeric field"))?;
        if vals.len() != 8 {
            return Err(fail("expected 8 fields"));
        }
        let qn = (vals[4] * vals[4] + vals[5] * vals[5] + vals[6] * vals[6] + vals[7] * vals[7]).sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(fail("quaternion is not unit length"));
        }
        if let Some(prev) = out.last() {
            if vals[0] <= prev.timestamp {
                return Err(fail("timestamps must be strictly increasing"));
            }
        }
        out.push(StampedPose {
            timestamp: vals[0],
            pose: RigidTransform::from_tum([vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6], vals[7]]),
        });
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(path, &text)
}
