//! Offline RGB-D reconstruction from depth + color sequences.
//!
//! Keypoints are detected on the depth image with a scale-space segment-test
//! detector, lifted to 3D, described with C-SHOT, matched, coarsely aligned
//! with RANSAC and refined with point-to-plane ICP. Keyframe poses feed a
//! pose graph with loop closures. A time-of-flight sensor simulator and
//! geometric evaluation tools close the loop for testing.

pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod geometry;
pub mod io;
pub mod keypoints;
pub mod pipeline;
pub mod posegraph;
pub mod registration;
pub mod sim;

pub use error::{Error, Result};
