//! C-SHOT: a SHOT-style local reference frame plus concatenated
//! normal-orientation and color-difference histograms over a spherical support.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use palette::white_point::D65;
use palette::{IntoColor, Lab, Srgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, Rgb};

pub const AZIMUTH_BINS: usize = 8;
pub const ELEVATION_BINS: usize = 2;
pub const RADIAL_BINS: usize = 2;
pub const VOLUMES: usize = AZIMUTH_BINS * ELEVATION_BINS * RADIAL_BINS;
pub const GEOMETRIC_BINS: usize = 11;
pub const COLOR_BINS: usize = 31;
pub const GEOMETRIC_LEN: usize = VOLUMES * GEOMETRIC_BINS;
pub const COLOR_LEN: usize = VOLUMES * COLOR_BINS;
pub const MIN_LRF_NEIGHBORS: usize = 5;
/// CIELab L1 distance mapped to 1.0 in the color histogram; larger
/// differences saturate in the last bin.
pub const COLOR_L1_RANGE: f64 = 200.0;
const EIGEN_TIE: f64 = 1e-9;
/// Support points closer than this fraction of the radius to the keypoint are skipped.
const COINCIDENT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalReferenceFrame {
    pub origin: Point3<f64>,
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl LocalReferenceFrame {
    pub fn to_local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(d.dot(&self.x), d.dot(&self.y), d.dot(&self.z))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrfError {
    #[error("only {found} neighbors in the support, need {MIN_LRF_NEIGHBORS}")]
    TooFewNeighbors { found: usize },
    #[error("neighborhood covariance has repeated eigenvalues")]
    Degenerate,
}

impl From<LrfError> for Error {
    fn from(e: LrfError) -> Self {
        Error::Degenerate(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorMode {
    Colored,
    GeometricOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CShotDescriptor {
    pub geometric: Vec<f64>,
    pub color: Vec<f64>,
    pub support_radius: f64,
    pub mode: DescriptorMode,
    /// No points fell inside the support.
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorParams {
    pub support_radius: f64,
    /// Use the color histogram when the cloud carries colors.
    pub use_color: bool,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            support_radius: 0.25,
            use_color: true,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.support_radius > 0.0 && self.support_radius.is_finite()) {
            return Err(Error::Parameter(format!(
                "support_radius must be positive, got {}",
                self.support_radius
            )));
        }
        Ok(())
    }
}

/// SHOT reference frame from the neighbors of `keypoint` within `radius`.
/// Axes follow the weighted covariance eigenvectors (x largest, z smallest)
/// with each sign pointing toward the majority of neighbors. When the
/// neighbors cannot decide z (a flat patch), it follows the mean normal.
/// The x sign must be decidable from the neighbors.
pub fn compute_lrf(
    keypoint: &Point3<f64>,
    neighbors: &PointCloud,
    radius: f64,
) -> std::result::Result<LocalReferenceFrame, LrfError> {
    let offsets: Vec<(Vector3<f64>, f64)> = neighbors
        .points
        .iter()
        .filter_map(|p| {
            let q = p - keypoint;
            let d = q.norm();
            (d < radius).then_some((q, radius - d))
        })
        .collect();
    if offsets.len() < MIN_LRF_NEIGHBORS {
        return Err(LrfError::TooFewNeighbors { found: offsets.len() });
    }
    let total: f64 = offsets.iter().map(|(_, w)| w).sum();
    let mut cov = Matrix3::zeros();
    for (q, w) in &offsets {
        cov += *w * q * q.transpose();
    }
    cov /= total;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = l[0].abs();
    if scale <= f64::MIN_POSITIVE || l[0] - l[1] <= EIGEN_TIE * scale || l[1] - l[2] <= EIGEN_TIE * scale {
        return Err(LrfError::Degenerate);
    }
    let eps = EIGEN_TIE * radius;
    let orient = |axis: Vector3<f64>| -> Option<Vector3<f64>> {
        let pos = offsets.iter().filter(|(q, _)| q.dot(&axis) > eps).count();
        let neg = offsets.iter().filter(|(q, _)| q.dot(&axis) < -eps).count();
        if pos != neg {
            return Some(if pos > neg { axis } else { -axis });
        }
        let s: f64 = offsets.iter().map(|(q, w)| w * q.dot(&axis)).sum();
        if s.abs() > eps * total {
            Some(if s > 0.0 { axis } else { -axis })
        } else {
            None
        }
    };
    let x_raw = eig.eigenvectors.column(order[0]).into_owned();
    let z_raw = eig.eigenvectors.column(order[2]).into_owned();
    let x = orient(x_raw).ok_or(LrfError::Degenerate)?;
    let z = match orient(z_raw) {
        Some(z) => z,
        None => {
            let mean: Vector3<f64> = neighbors
                .normals
                .as_ref()
                .map(|ns| ns.iter().sum())
                .unwrap_or_else(Vector3::zeros);
            let s = mean.dot(&z_raw);
            let s = if s.abs() > f64::EPSILON * mean.norm().max(1.0) {
                s
            } else {
                // no normals either: make the dominant component positive
                z_raw.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0)
            };
            if s > 0.0 {
                z_raw
            } else {
                -z_raw
            }
        }
    };
    let x = (x - z * z.dot(&x)).normalize();
    let y = z.cross(&x);
    Ok(LocalReferenceFrame {
        origin: *keypoint,
        x,
        y,
        z,
    })
}

/// CIELab (D65) coordinates of an sRGB color.
pub fn rgb_to_lab(c: Rgb) -> [f64; 3] {
    let lab: Lab<D65, f64> = Srgb::new(c[0], c[1], c[2]).into_format::<f64>().into_color();
    [lab.l, lab.a, lab.b]
}

/// L1 CIELab distance scaled to `[0, 1]`.
pub fn color_difference(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let l1 = (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs();
    (l1 / COLOR_L1_RANGE).min(1.0)
}

/// Linear interpolation weights over bin centers at `0, 1, .., n-1` for the
/// continuous coordinate `t`, clamped at both ends.
fn tent(t: f64, n: usize) -> [(usize, f64); 2] {
    let t = t.clamp(0.0, (n - 1) as f64);
    let k = (t.floor() as usize).min(n - 2);
    let f = t - k as f64;
    [(k, 1.0 - f), (k + 1, f)]
}

/// Same as [`tent`] but wrapping around `n` bins.
fn circular_tent(t: f64, n: usize) -> [(usize, f64); 2] {
    let t = t.rem_euclid(n as f64);
    let k = t.floor();
    let f = t - k;
    let k = k as usize % n;
    [(k, 1.0 - f), ((k + 1) % n, f)]
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Describes `keypoint` from the points of `cloud` strictly inside `radius`.
/// The cloud must carry normals. The keypoint color is that of its nearest
/// support point; without cloud colors the descriptor is geometric-only.
pub fn compute_cshot(
    keypoint: &Point3<f64>,
    cloud: &PointCloud,
    radius: f64,
    lrf: &LocalReferenceFrame,
) -> Result<CShotDescriptor> {
    let r2 = radius * radius;
    let support: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - keypoint).norm_squared() < r2)
        .collect();
    cshot_from_support(keypoint, cloud, &support, radius, lrf, true)
}

fn cshot_from_support(
    keypoint: &Point3<f64>,
    cloud: &PointCloud,
    support: &[usize],
    radius: f64,
    lrf: &LocalReferenceFrame,
    use_color: bool,
) -> Result<CShotDescriptor> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("support radius must be positive, got {radius}")));
    }
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::Parameter("C-SHOT needs a cloud with normals".into()))?;
    let colors = cloud.colors.as_ref().filter(|_| use_color);
    let mode = if colors.is_some() {
        DescriptorMode::Colored
    } else {
        DescriptorMode::GeometricOnly
    };
    let mut geometric = vec![0.0; GEOMETRIC_LEN];
    let mut color = vec![0.0; COLOR_LEN];
    let center_lab = colors.and_then(|cs| {
        support
            .iter()
            .min_by(|&&a, &&b| {
                (cloud.points[a] - keypoint)
                    .norm_squared()
                    .total_cmp(&(cloud.points[b] - keypoint).norm_squared())
                    .then(a.cmp(&b))
            })
            .map(|&i| rgb_to_lab(cs[i]))
    });

    let half = radius / 2.0;
    for &i in support {
        let l = lrf.to_local(&cloud.points[i]);
        let r = l.norm();
        // direction is undefined for a point on top of the keypoint
        if r <= COINCIDENT * radius {
            continue;
        }
        let radial = tent(r / half - 0.5, RADIAL_BINS);
        let elevation = tent(l.z.atan2(l.x.hypot(l.y)) / std::f64::consts::FRAC_PI_2 + 0.5, ELEVATION_BINS);
        let azimuth = circular_tent(l.y.atan2(l.x) / std::f64::consts::FRAC_PI_4 - 0.5, AZIMUTH_BINS);
        let cos = normals[i].dot(&lrf.z).clamp(-1.0, 1.0);
        let geo_bins = tent((cos + 1.0) * 0.5 * (GEOMETRIC_BINS - 1) as f64, GEOMETRIC_BINS);
        let color_bins = match (colors, &center_lab) {
            (Some(cs), Some(c0)) => {
                let d = color_difference(&rgb_to_lab(cs[i]), c0);
                Some(tent(d * (COLOR_BINS - 1) as f64, COLOR_BINS))
            }
            _ => None,
        };
        for &(rb, rw) in &radial {
            for &(eb, ew) in &elevation {
                for &(ab, aw) in &azimuth {
                    let w = rw * ew * aw;
                    if w == 0.0 {
                        continue;
                    }
                    let volume = (rb * ELEVATION_BINS + eb) * AZIMUTH_BINS + ab;
                    for &(gb, gw) in &geo_bins {
                        geometric[volume * GEOMETRIC_BINS + gb] += w * gw;
                    }
                    if let Some(cb) = &color_bins {
                        for &(b, bw) in cb {
                            color[volume * COLOR_BINS + b] += w * bw;
                        }
                    }
                }
            }
        }
    }
    normalize(&mut geometric);
    normalize(&mut color);
    Ok(CShotDescriptor {
        geometric,
        color,
        support_radius: radius,
        mode,
        empty: support.is_empty(),
    })
}

/// Euclidean distance over the concatenated parts, or over the geometric
/// part alone in geometric-only mode.
pub fn descriptor_distance(a: &CShotDescriptor, b: &CShotDescriptor) -> Result<f64> {
    if a.mode != b.mode {
        return Err(Error::Comparison(format!(
            "cannot compare {:?} and {:?} descriptors",
            a.mode, b.mode
        )));
    }
    let mut s: f64 = a.geometric.iter().zip(&b.geometric).map(|(x, y)| (x - y).powi(2)).sum();
    if a.mode == DescriptorMode::Colored {
        s += a.color.iter().zip(&b.color).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(s.sqrt())
}

/// Describes every keypoint against `cloud` (which must carry normals).
/// Keypoints with too few neighbors or a degenerate LRF yield `None`.
pub fn describe_keypoints(
    keypoints: &[Point3<f64>],
    cloud: &PointCloud,
    params: &DescriptorParams,
) -> Result<Vec<Option<CShotDescriptor>>> {
    params.validate()?;
    if !cloud.has_normals() {
        return Err(Error::Parameter("C-SHOT needs a cloud with normals".into()));
    }
    let tree = KdTree::new(&cloud.points);
    let r = params.support_radius;
    keypoints
        .par_iter()
        .map(|kp| {
            let mut support: Vec<usize> = tree
                .radius(kp, r)
                .into_iter()
                .filter(|n| n.dist_sq < r * r)
                .map(|n| n.index)
                .collect();
            support.sort_unstable();
            let local = cloud.select(&support);
            let lrf = match compute_lrf(kp, &local, r) {
                Ok(lrf) => lrf,
                Err(_) => return Ok(None),
            };
            cshot_from_support(kp, cloud, &support, r, &lrf, params.use_color).map(Some)
        })
        .collect()
}
