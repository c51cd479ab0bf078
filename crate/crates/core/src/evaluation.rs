//! Geometric quality of reconstructions: plane fits, planarity error maps,
//! wall perpendicularity and absolute trajectory error.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::registration::estimate_transform_svd;
use crate::sim::NamedRegion;

/// Second-largest over largest covariance eigenvalue below which a selection
/// counts as collinear.
const COLLINEAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    /// Unit normal; the plane is `normal · x = offset`.
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Points the statistics were computed over (every selected point).
    pub inlier_indices: Vec<usize>,
    pub mean_abs_distance: f64,
    pub rms_distance: f64,
    pub max_distance: f64,
}

impl PlaneFit {
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Total-least-squares plane through `cloud`. The normal is oriented so the
/// offset is non-negative (dominant component positive when the plane passes
/// through the origin).
pub fn fit_plane(cloud: &PointCloud) -> Result<PlaneFit> {
    let n = cloud.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("plane fit needs 3 points, got {n}")));
    }
    let centroid = cloud.points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if hi <= f64::MIN_POSITIVE || mid <= COLLINEAR_TOL * hi {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    debug_assert!(lo <= mid);
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    let mut offset = normal.dot(&centroid);
    let flip = if offset.abs() > 1e-12 {
        offset < 0.0
    } else {
        let k = normal.iamax();
        normal[k] < 0.0
    };
    if flip {
        normal = -normal;
        offset = -offset;
    }
    let mut fit = PlaneFit {
        normal,
        offset,
        inlier_indices: (0..n).collect(),
        mean_abs_distance: 0.0,
        rms_distance: 0.0,
        max_distance: 0.0,
    };
    let (mut sum_abs, mut sum_sq, mut max) = (0.0, 0.0, 0.0f64);
    for p in &cloud.points {
        let d = fit.signed_distance(p).abs();
        sum_abs += d;
        sum_sq += d * d;
        max = max.max(d);
    }
    fit.mean_abs_distance = sum_abs / n as f64;
    fit.rms_distance = (sum_sq / n as f64).sqrt();
    fit.max_distance = max;
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    /// Signed distance of every point to the plane, in input order.
    pub distances: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub histogram: Histogram,
}

pub const HISTOGRAM_BINS: usize = 40;

/// Signed point-to-plane distances with summary statistics.
pub fn planarity_error_map(cloud: &PointCloud, fit: &PlaneFit) -> ErrorMap {
    let distances: Vec<f64> = cloud.points.iter().map(|p| fit.signed_distance(p)).collect();
    let n = distances.len().max(1) as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let extent = distances.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let width = if extent > 0.0 { 2.0 * extent / HISTOGRAM_BINS as f64 } else { 1e-3 };
    let lo = -(HISTOGRAM_BINS as f64) * width / 2.0;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for d in &distances {
        let b = (((d - lo) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    ErrorMap {
        distances,
        mean,
        std_dev: var.sqrt(),
        histogram: Histogram { edges, counts },
    }
}

/// CSV with columns `index,x,y,z,signed_distance`.
pub fn write_error_map_csv(path: &Path, cloud: &PointCloud, map: &ErrorMap) -> Result<()> {
    if cloud.len() != map.distances.len() {
        return Err(Error::Dimension(format!(
            "{} points vs {} distances",
            cloud.len(),
            map.distances.len()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "index,x,y,z,signed_distance")?;
        for (i, (p, d)) in cloud.points.iter().zip(&map.distances).enumerate() {
            writeln!(out, "{i},{},{},{},{}", p.x, p.y, p.z, d)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Acute angle between two plane normals, in degrees within `[0, 90]`.
pub fn plane_angle_deg(a: &PlaneFit, b: &PlaneFit) -> f64 {
    a.normal.dot(&b.normal).abs().min(1.0).acos().to_degrees()
}

/// Deviation from a right angle, in degrees.
pub fn perpendicularity(a: &PlaneFit, b: &PlaneFit) -> f64 {
    (90.0 - plane_angle_deg(a, b)).abs()
}

/// Rigid transform best mapping the estimated camera centers onto the ground
/// truth ones. Collinear or too-short trajectories only get their centroids
/// aligned.
pub fn align_trajectories(estimated: &[RigidTransform], ground_truth: &[RigidTransform]) -> Result<RigidTransform> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::AlignmentFailed(format!(
            "{} estimated poses vs {} ground-truth poses",
            estimated.len(),
            ground_truth.len()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::AlignmentFailed("trajectories are empty".into()));
    }
    let src: Vec<Point3<f64>> = estimated.iter().map(|p| Point3::from(p.translation())).collect();
    let dst: Vec<Point3<f64>> = ground_truth.iter().map(|p| Point3::from(p.translation())).collect();
    match estimate_transform_svd(&src, &dst) {
        Ok(t) => Ok(t),
        Err(Error::Degenerate(_)) => {
            let n = src.len() as f64;
            let cs = src.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
            let cd = dst.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
            Ok(RigidTransform::from_translation(cd - cs))
        }
        Err(e) => Err(e),
    }
}

/// RMSE of translational residuals after rigid alignment.
pub fn trajectory_ate(estimated: &[RigidTransform], ground_truth: &[RigidTransform]) -> Result<f64> {
    let align = align_trajectories(estimated, ground_truth)?;
    let sum: f64 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| (align.apply(&Point3::from(e.translation())) - Point3::from(g.translation())).norm_squared())
        .sum();
    Ok((sum / estimated.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Region {
    Box { min: [f64; 3], max: [f64; 3] },
    Indices { indices: Vec<usize> },
}

impl From<&NamedRegion> for Region {
    fn from(r: &NamedRegion) -> Self {
        Region::Box { min: r.min, max: r.max }
    }
}

/// Subset of `cloud` inside `region`, keeping colors and normals.
pub fn select_region(cloud: &PointCloud, region: &Region) -> Result<PointCloud> {
    let indices: Vec<usize> = match region {
        Region::Box { min, max } => cloud
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]))
            .map(|(i, _)| i)
            .collect(),
        Region::Indices { indices } => {
            if let Some(bad) = indices.iter().find(|&&i| i >= cloud.len()) {
                return Err(Error::Parameter(format!(
                    "index {bad} out of range for {} points",
                    cloud.len()
                )));
            }
            indices.clone()
        }
    };
    if indices.is_empty() {
        return Err(Error::EmptySelection("region contains no points".into()));
    }
    Ok(cloud.select(&indices))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub region: String,
    pub point_count: usize,
    pub normal: [f64; 3],
    pub offset: f64,
    pub mean_abs_distance: f64,
    pub rms_distance: f64,
    pub max_distance: f64,
    pub error_std_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub a: String,
    pub b: String,
    /// Acute angle between the plane normals.
    pub angle_deg: f64,
    pub deviation_from_perpendicular_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub pose_count: usize,
    pub ate_rmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub planes: Vec<PlaneReport>,
    pub angles: Vec<AngleReport>,
    pub trajectory: Option<TrajectoryReport>,
    /// Which points the plane statistics cover.
    pub distance_population: String,
    /// Regions left out because too few map points fell inside them.
    #[serde(default)]
    pub skipped_regions: Vec<String>,
}

impl PlaneReport {
    pub fn new(region: &str, fit: &PlaneFit, map: &ErrorMap) -> Self {
        Self {
            region: region.to_string(),
            point_count: fit.inlier_indices.len(),
            normal: [fit.normal.x, fit.normal.y, fit.normal.z],
            offset: fit.offset,
            mean_abs_distance: fit.mean_abs_distance,
            rms_distance: fit.rms_distance,
            max_distance: fit.max_distance,
            error_std_dev: map.std_dev,
        }
    }
}

impl AngleReport {
    pub fn new(a: (&str, &PlaneFit), b: (&str, &PlaneFit)) -> Self {
        Self {
            a: a.0.to_string(),
            b: b.0.to_string(),
            angle_deg: plane_angle_deg(a.1, b.1),
            deviation_from_perpendicular_deg: perpendicularity(a.1, b.1),
        }
    }
}
