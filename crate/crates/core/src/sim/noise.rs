use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::RgbdFrame;

/// Depth jump (mm) treated as a discontinuity for edge dropout.
pub const EDGE_JUMP_MM: u16 = 100;

/// Time-of-flight depth noise: σ grows linearly with depth and exponentially
/// with the normalized distance from the optical axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// σ at `depth_min` on the optical axis (m).
    pub sigma0: f64,
    /// Additional σ per meter beyond `depth_min`.
    pub depth_slope: f64,
    /// Scale of the radial term (m).
    pub radial_gain: f64,
    pub radial_rate: f64,
    pub dropout_prob: f64,
    /// Pixels closer than this (Chebyshev, px) to a >100 mm jump are dropped.
    pub edge_dropout_radius: usize,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma0: 0.002,
            depth_slope: 0.0015,
            radial_gain: 0.001,
            radial_rate: 2.0,
            dropout_prob: 0.005,
            edge_dropout_radius: 1,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            sigma0: 0.0,
            depth_slope: 0.0,
            radial_gain: 0.0,
            radial_rate: 0.0,
            dropout_prob: 0.0,
            edge_dropout_radius: 0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// σ(z, r) in meters; `r` is the normalized radial distance in `[0, 1]`.
    pub fn sigma(&self, z: f64, depth_min: f64, r: f64) -> f64 {
        self.sigma0 + self.depth_slope * (z - depth_min) + self.radial_gain * ((self.radial_rate * r).exp() - 1.0)
    }

    pub fn is_null(&self) -> bool {
        self.sigma0 == 0.0
            && self.depth_slope == 0.0
            && self.radial_gain == 0.0
            && self.dropout_prob == 0.0
            && self.edge_dropout_radius == 0
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.sigma0 >= 0.0 && self.depth_slope >= 0.0 && self.radial_gain >= 0.0) {
            return Err(crate::Error::Parameter("noise coefficients must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(crate::Error::Parameter("dropout_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn row_seed(seed: u64, frame_index: usize, row: usize) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ frame_index as u64;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB) ^ ((row as u64) << 32);
    x ^ (x >> 31)
}

/// Perturbs every valid depth with zero-mean Gaussian noise, applies random
/// and edge dropout, and re-quantizes to millimeters. Color is untouched.
/// Deterministic given the model seed and the frame index.
pub fn apply_noise(frame: &RgbdFrame, model: &NoiseModel) -> RgbdFrame {
    if model.is_null() {
        return frame.clone();
    }
    let depth = &frame.depth;
    let k = depth.intrinsics;
    let (w, h) = (k.width, k.height);
    let radius = model.edge_dropout_radius as i64;
    let dropout = Bernoulli::new(model.dropout_prob.clamp(0.0, 1.0)).expect("probability in range");
    let (min_mm, max_mm) = (k.depth_min_mm() as f64, k.depth_max_mm() as f64);

    let rows: Vec<Vec<u16>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(row_seed(model.seed, frame.frame_index, v));
            let mut out = vec![0u16; w];
            for u in 0..w {
                let mm = depth.at(u, v);
                // draws happen for every pixel so the stream does not depend on validity
                let gauss: f64 = StandardNormal.sample(&mut rng);
                let drop = dropout.sample(&mut rng);
                if !depth.is_valid_mm(mm) || drop {
                    continue;
                }
                if radius > 0 && near_discontinuity(depth, u, v, radius) {
                    continue;
                }
                let z = mm as f64 / 1000.0;
                let r = k.normalized_radius(u as f64, v as f64);
                let noisy = ((z + gauss * model.sigma(z, k.depth_min, r)) * 1000.0).round();
                if noisy >= min_mm && noisy <= max_mm {
                    out[u] = noisy as u16;
                }
            }
            out
        })
        .collect();
    let mut out = frame.clone();
    out.depth.depth = rows.concat();
    out
}

fn near_discontinuity(depth: &crate::geometry::DepthFrame, u: usize, v: usize, radius: i64) -> bool {
    let c = depth.at(u, v);
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    for dv in -radius..=radius {
        for du in -radius..=radius {
            let (uu, vv) = (u as i64 + du, v as i64 + dv);
            if uu < 0 || vv < 0 || uu >= w || vv >= h {
                continue;
            }
            let d = depth.at(uu as usize, vv as usize);
            if depth.is_valid_mm(d) && d.abs_diff(c) > EDGE_JUMP_MM {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, DepthFrame};

    fn flat_frame(k: CameraIntrinsics, mm: u16, index: usize) -> RgbdFrame {
        RgbdFrame {
            depth: DepthFrame::new(k, vec![mm; k.pixel_count()], 0.0).unwrap(),
            color: None,
            frame_index: index,
        }
    }

    #[test]
    fn null_model_is_identity() {
        let f = flat_frame(CameraIntrinsics::kinect_v2(), 1234, 0);
        assert_eq!(apply_noise(&f, &NoiseModel::none()), f);
    }

    #[test]
    fn deterministic_per_seed_and_frame() {
        let f = flat_frame(CameraIntrinsics::kinect_v2(), 2000, 3);
        let m = NoiseModel::default().with_seed(11);
        assert_eq!(apply_noise(&f, &m), apply_noise(&f, &m));
        assert_ne!(apply_noise(&f, &m), apply_noise(&f, &m.clone().with_seed(12)));
    }

    #[test]
    fn edge_pixels_dropped() {
        let k = CameraIntrinsics::kinect_v2();
        let mut depth = vec![1000u16; k.pixel_count()];
        for v in 0..k.height {
            for u in 300..k.width {
                depth[v * k.width + u] = 3000;
            }
        }
        let f = RgbdFrame {
            depth: DepthFrame::new(k, depth, 0.0).unwrap(),
            color: None,
            frame_index: 0,
        };
        let m = NoiseModel {
            dropout_prob: 0.0,
            ..NoiseModel::default()
        };
        let out = apply_noise(&f, &m);
        assert_eq!(out.depth.at(299, 100), 0);
        assert_eq!(out.depth.at(300, 100), 0);
        assert_ne!(out.depth.at(297, 100), 0);
        assert_ne!(out.depth.at(302, 100), 0);
    }

    #[test]
    fn sigma_formula() {
        let m = NoiseModel::default();
        assert!((m.sigma(0.5, 0.5, 0.0) - 0.002).abs() < 1e-15);
        assert!((m.sigma(4.5, 0.5, 0.0) - 0.008).abs() < 1e-15);
        let edge = m.sigma(0.5, 0.5, 1.0);
        assert!((edge - (0.002 + 0.001 * (2f64.exp() - 1.0))).abs() < 1e-15);
    }
}
