
use rustc_hash::FxHashMap;
use nalgebra::{Point3, Vector3};

use super::RigidTransform;
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Points in meters with optional parallel color and unit-normal arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub colors: Option<Vec<Rgb>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            colors: None,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.colors.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::Dimension("color array length differs from point count".into()));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Dimension("normal array length differs from point count".into()));
            }
            if normals.iter().any(|nv| (nv.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::Parameter("stored normal is not unit length".into()));
            }
        }
        if self.points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Parameter("non-finite point coordinate".into()));
        }
        Ok(())
    }

    /// Subset preserving attributes, in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self.normals.as_ref().map(|nv| indices.iter().map(|&i| nv[i]).collect()),
        }
    }

    /// Attaches per-point normals, dropping points whose normal is invalid.
    pub fn with_normals(&self, normals: &[Option<Vector3<f64>>]) -> PointCloud {
        let keep: Vec<usize> = normals
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.map(|_| i))
            .collect();
        let mut out = PointCloud {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect()),
            normals: None,
        };
        out.normals = Some(keep.iter().map(|&i| normals[i].unwrap()).collect());
        out
    }

    /// Appends `other`; attribute arrays survive only when both sides have them.
    pub fn extend(&mut self, other: &PointCloud) {
        let had_points = !self.points.is_empty();
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if !had_points => Some(b.clone()),
            _ => None,
        };
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if !had_points => Some(b.clone()),
            _ => None,
        };
        self.points.extend_from_slice(&other.points);
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }
}

/// `p' = R·p + t`, `n' = R·n`; colors are carried over unchanged.
pub fn transform_cloud(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| transform.apply(p)).collect(),
        colors: cloud.colors.clone(),
        normals: cloud
            .normals
            .as_ref()
            .map(|nv| nv.iter().map(|n| transform.apply_vector(n)).collect()),
    }
}

type VoxelKey = (i64, i64, i64);

#[derive(Clone, Debug)]
struct VoxelCell {
    sum: Vector3<f64>,
    count: u32,
    color_sum: [f64; 3],
    normal_sum: Vector3<f64>,
    first_normal: Option<Vector3<f64>>,
}

/// Running per-voxel centroids. Accumulating several clouds gives the same
/// result as downsampling their union.
#[derive(Clone, Debug)]
pub struct VoxelAccumulator {
    voxel: f64,
    cells: FxHashMap<VoxelKey, VoxelCell>,
    colored: Option<bool>,
    with_normals: Option<bool>,
}

impl VoxelAccumulator {
    pub fn new(voxel: f64) -> Result<Self> {
        if !(voxel > 0.0 && voxel.is_finite()) {
            return Err(Error::Parameter(format!("voxel size must be positive, got {voxel}")));
        }
        Ok(Self {
            voxel,
            cells: FxHashMap::default(),
            colored: None,
            with_normals: None,
        })
    }

    pub fn voxel(&self) -> f64 {
        self.voxel
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn key(&self, p: &Point3<f64>) -> VoxelKey {
        (
            (p.x / self.voxel).floor() as i64,
            (p.y / self.voxel).floor() as i64,
            (p.z / self.voxel).floor() as i64,
        )
    }

    pub fn insert(&mut self, cloud: &PointCloud) {
        if cloud.is_empty() {
            return;
        }
        let colored = *self.colored.get_or_insert(cloud.has_colors()) && cloud.has_colors();
        self.colored = Some(colored);
        let with_normals = *self.with_normals.get_or_insert(cloud.has_normals()) && cloud.has_normals();
        self.with_normals = Some(with_normals);
        for (i, p) in cloud.points.iter().enumerate() {
            let key = self.key(p);
            let cell = self.cells.entry(key).or_insert(VoxelCell {
                sum: Vector3::zeros(),
                count: 0,
                color_sum: [0.0; 3],
                normal_sum: Vector3::zeros(),
                first_normal: None,
            });
            cell.sum += p.coords;
            cell.count += 1;
            if let Some(c) = cloud.colors.as_ref().map(|c| c[i]) {
                for k in 0..3 {
                    cell.color_sum[k] += c[k] as f64;
                }
            }
            if let Some(n) = cloud.normals.as_ref().map(|n| n[i]) {
                cell.normal_sum += n;
                cell.first_normal.get_or_insert(n);
            }
        }
    }

    /// Materializes the centroids, ordered by voxel key.
    pub fn to_cloud(&self) -> PointCloud {
        let mut keys: Vec<&VoxelKey> = self.cells.keys().collect();
        keys.sort_unstable();
        let colored = self.colored.unwrap_or(false);
        let with_normals = self.with_normals.unwrap_or(false);
        let mut out = PointCloud {
            points: Vec::with_capacity(keys.len()),
            colors: colored.then(|| Vec::with_capacity(keys.len())),
            normals: with_normals.then(|| Vec::with_capacity(keys.len())),
        };
        for key in keys {
            let cell = &self.cells[key];
            let n = cell.count as f64;
            out.points.push(Point3::from(cell.sum / n));
            if let Some(colors) = out.colors.as_mut() {
                colors.push(cell.color_sum.map(|c| (c / n).round().clamp(0.0, 255.0) as u8));
            }
            if let Some(normals) = out.normals.as_mut() {
                let norm = cell.normal_sum.norm();
                let nv = if norm > 1e-9 {
                    cell.normal_sum / norm
                } else {
                    cell.first_normal.unwrap_or_else(Vector3::z)
                };
                normals.push(nv);
            }
        }
        out
    }
}

/// One centroid per occupied cubic voxel of side `voxel` meters.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    let mut acc = VoxelAccumulator::new(voxel)?;
    acc.insert(cloud);
    Ok(acc.to_cloud())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_points_in_one_voxel_average() {
        let cloud = PointCloud {
            points: vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.3, 0.2, 0.1)],
            colors: Some(vec![[0, 0, 0], [100, 50, 255]]),
            normals: Some(vec![Vector3::z(), Vector3::x()]),
        };
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Point3::new(0.2, 0.15, 0.1)).norm() < 1e-12);
        assert_eq!(out.colors.unwrap()[0], [50, 25, 128]);
        let n = out.normals.unwrap()[0];
        assert!((n.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_points_are_untouched() {
        let points: Vec<_> = (0..20).map(|i| Point3::new(i as f64 * 0.5 + 0.01, 0.0, 0.0)).collect();
        let out = voxel_downsample(&PointCloud::from_points(points), 0.1).unwrap();
        assert_eq!(out.len(), 20);
    }

    #[test]
    fn unit_cube_collapses_to_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<_> = (0..1000)
            .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let mut sum = Vector3::zeros();
        for p in &points {
            sum += p.coords;
        }
        let expected = sum / 1000.0;
        let out = voxel_downsample(&PointCloud::from_points(points), 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0].coords - expected).norm() < 1e-12);
    }

    #[test]
    fn non_positive_voxel_rejected() {
        let cloud = PointCloud::from_points(vec![Point3::origin()]);
        assert!(matches!(voxel_downsample(&cloud, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(voxel_downsample(&cloud, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn accumulating_identical_clouds_is_idempotent() {
        let points: Vec<_> = (0..50).map(|i| Point3::new(i as f64 * 0.013, 0.2, 1.0)).collect();
        let cloud = PointCloud::from_points(points);
        let mut acc = VoxelAccumulator::new(0.05).unwrap();
        acc.insert(&cloud);
        acc.insert(&cloud);
        let once = voxel_downsample(&cloud, 0.05).unwrap();
        let twice = acc.to_cloud();
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.points.iter().zip(&twice.points) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_then_inverse_restores() {
        let cloud = PointCloud {
            points: vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-0.5, 0.1, 2.0)],
            colors: None,
            normals: Some(vec![Vector3::x(), Vector3::new(0.0, 0.6, 0.8)]),
        };
        let t = RigidTransform::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.7, Vector3::new(0.3, 0.0, -1.0));
        let back = transform_cloud(&transform_cloud(&cloud, &t), &t.inverse());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-9);
        }
        let identity = transform_cloud(&cloud, &RigidTransform::identity());
        assert_eq!(identity, cloud);
    }

    #[test]
    fn validate_rejects_mismatched_arrays() {
        let cloud = PointCloud {
            points: vec![Point3::origin()],
            colors: Some(vec![]),
            normals: None,
        };
        assert!(cloud.validate().is_err());
    }
}
