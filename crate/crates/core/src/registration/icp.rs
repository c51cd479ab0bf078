use nalgebra::{Matrix6, Point3, SymmetricEigen, UnitQuaternion, Vector3, Vector6};
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use super::RegistrationResult;
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, RigidTransform};

/// Eigenvalues of the 6×6 normal matrix below this fraction of the largest
/// are treated as unobservable directions.
const DEGENERACY_RATIO: f64 = 1e-6;
const MAX_STEP_HALVINGS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpParams {
    pub max_corr_dist: f64,
    pub max_iterations: usize,
    pub translation_eps: f64,
    pub rotation_eps: f64,
    /// Pairs whose normals differ by more than this many degrees are dropped.
    pub max_normal_angle_deg: f64,
    /// Voxel size used to thin the source cloud before iterating (one original
    /// point kept per voxel); 0 keeps every point.
    pub source_voxel: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_corr_dist: 0.05,
            max_iterations: 30,
            translation_eps: 1e-5,
            rotation_eps: 1e-4,
            max_normal_angle_deg: 45.0,
            source_voxel: 0.025,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_corr_dist > 0.0) || self.max_iterations == 0 {
            return Err(Error::Parameter(
                "ICP needs a positive max_corr_dist and at least one iteration".into(),
            ));
        }
        if !(self.source_voxel >= 0.0 && self.source_voxel.is_finite()) {
            return Err(Error::Parameter("ICP source_voxel must be non-negative".into()));
        }
        if !(self.translation_eps >= 0.0 && self.rotation_eps >= 0.0) {
            return Err(Error::Parameter("ICP convergence thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Index of the first point in each occupied voxel, in index order.
fn voxel_subsample(cloud: &PointCloud, voxel: f64) -> Vec<usize> {
    let mut seen = FxHashSet::default();
    (0..cloud.len())
        .filter(|&i| {
            let p = cloud.points[i];
            let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64);
            seen.insert(key)
        })
        .collect()
}

struct Pairs {
    /// (transformed source point, target point, target normal)
    items: Vec<(Point3<f64>, Point3<f64>, Vector3<f64>)>,
    objective: f64,
}

fn find_pairs(
    source: &PointCloud,
    target: &PointCloud,
    tree: &KdTree,
    t: &RigidTransform,
    params: &IcpParams,
) -> Pairs {
    let target_normals = target.normals.as_ref().unwrap();
    let cos_min = params.max_normal_angle_deg.to_radians().cos();
    let max_d2 = params.max_corr_dist * params.max_corr_dist;
    let items: Vec<_> = (0..source.len())
        .into_par_iter()
        .filter_map(|i| {
            let p = t.apply(&source.points[i]);
            let nb = tree.nearest(&p)?;
            if nb.dist_sq > max_d2 {
                return None;
            }
            let n = target_normals[nb.index];
            if let Some(sn) = &source.normals {
                if t.apply_vector(&sn[i]).dot(&n) < cos_min {
                    return None;
                }
            }
            Some((p, target.points[nb.index], n))
        })
        .collect();
    let objective = if items.is_empty() {
        f64::INFINITY
    } else {
        items.iter().map(|(p, q, n)| (p - q).dot(n).powi(2)).sum::<f64>() / items.len() as f64
    };
    Pairs { items, objective }
}

/// Minimum-norm solution of the linearized point-to-plane system for the
/// step `(ω, t)`, and whether any direction was unobservable.
fn solve_step(pairs: &Pairs) -> (Vector6<f64>, bool) {
    let mut a = Matrix6::zeros();
    let mut b = Vector6::zeros();
    for (p, q, n) in &pairs.items {
        let j = Vector6::from_iterator(p.coords.cross(n).iter().chain(n.iter()).copied());
        let r = (p - q).dot(n);
        a += j * j.transpose();
        b -= j * r;
    }
    let eig = SymmetricEigen::new(a);
    let lmax = eig.eigenvalues.max();
    if lmax <= 0.0 {
        return (Vector6::zeros(), true);
    }
    let mut x = Vector6::zeros();
    let mut degenerate = false;
    for k in 0..6 {
        let l = eig.eigenvalues[k];
        if l <= DEGENERACY_RATIO * lmax {
            degenerate = true;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        x += v * (v.dot(&b) / l);
    }
    (x, degenerate)
}

fn step_transform(x: &Vector6<f64>) -> RigidTransform {
    RigidTransform::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(x[0], x[1], x[2])),
        Vector3::new(x[3], x[4], x[5]),
    )
}

/// Point-to-plane ICP from `init`. Each iteration solves the small-angle
/// normal equations, and a step is accepted only if the mean squared
/// point-to-plane residual (with refreshed correspondences) does not grow;
/// otherwise it is halved.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    if !target.has_normals() {
        return Err(Error::Parameter("ICP target needs normals".into()));
    }
    if target.is_empty() || source.is_empty() {
        return Err(Error::AlignmentFailed("empty cloud".into()));
    }
    let thinned;
    let source = if params.source_voxel > 0.0 {
        thinned = source.select(&voxel_subsample(source, params.source_voxel));
        &thinned
    } else {
        source
    };
    let tree = KdTree::new(&target.points);
    let mut t = *init;
    let mut pairs = find_pairs(source, target, &tree, &t, params);
    if pairs.items.is_empty() {
        return Err(Error::AlignmentFailed(format!(
            "no correspondences within {} m at the initial pose",
            params.max_corr_dist
        )));
    }
    let mut history = vec![pairs.objective];
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let (mut x, deg) = solve_step(&pairs);
        degenerate |= deg;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let cand = step_transform(&x).compose(&t);
            let next = find_pairs(source, target, &tree, &cand, params);
            if !next.items.is_empty() && next.objective <= pairs.objective {
                accepted = Some((cand, next));
                break;
            }
            x *= 0.5;
        }
        let Some((cand, next)) = accepted else {
            // no descent direction left at this pose
            converged = true;
            break;
        };
        t = cand;
        pairs = next;
        history.push(pairs.objective);
        let small = x.fixed_rows::<3>(3).norm() < params.translation_eps
            && x.fixed_rows::<3>(0).norm() < params.rotation_eps;
        if small {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult {
        transform: t,
        inlier_count: pairs.items.len(),
        rmse: pairs.objective.sqrt(),
        converged,
        iterations,
        degenerate,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform_cloud;

    /// Three mutually orthogonal square patches meeting at the origin, with
    /// exact inward-facing normals.
    fn corner(spacing: f64, size: f64) -> PointCloud {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let n = (size / spacing) as usize;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i as f64 * spacing, j as f64 * spacing);
                points.push(Point3::new(a, b, 0.0));
                normals.push(Vector3::z());
                points.push(Point3::new(a, 0.0, b + spacing));
                normals.push(Vector3::y());
                points.push(Point3::new(0.0, a + spacing, b + spacing));
                normals.push(Vector3::x());
            }
        }
        PointCloud {
            points,
            colors: None,
            normals: Some(normals),
        }
    }

    fn parallel_planes() -> PointCloud {
        let mut points = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                let (a, b) = (i as f64 * 0.02, j as f64 * 0.02);
                points.push(Point3::new(a, b, 1.0));
                points.push(Point3::new(a, b, 1.5));
            }
        }
        let n = points.len();
        PointCloud {
            points,
            colors: None,
            normals: Some(vec![-Vector3::z(); n]),
        }
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let c = corner(0.02, 0.6);
        let r = icp_point_to_plane(&c, &c, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.rmse, 0.0);
        let (dt, dr) = r.transform.distance_to(&RigidTransform::identity());
        assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn room_corner_perturbation_recovered() {
        let target = corner(0.01, 0.8);
        let d = 2f64.to_radians();
        let perturb = RigidTransform::new(UnitQuaternion::from_euler_angles(d, d, d), Vector3::new(0.01, 0.01, 0.01));
        // source is the target moved by the inverse perturbation
        let source = transform_cloud(&target, &perturb.inverse());
        let r = icp_point_to_plane(&source, &target, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        let (dt, dr) = r.transform.distance_to(&perturb);
        assert!(dt < 1e-3 && dr < 0.1f64.to_radians(), "dt {dt} dr {dr}");
        assert!(r.converged);
        assert!(!r.degenerate);
        for w in r.objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn parallel_planes_are_degenerate() {
        let target = parallel_planes();
        let source = transform_cloud(&target, &RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.01)));
        let r = icp_point_to_plane(&source, &target, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(r.degenerate);
        // the observable offset along the normal is still removed
        assert!((r.transform.translation().z + 0.01).abs() < 1e-6);
    }

    #[test]
    fn no_overlap_fails() {
        let target = corner(0.02, 0.4);
        let source = transform_cloud(&target, &RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0)));
        assert!(matches!(
            icp_point_to_plane(&source, &target, &RigidTransform::identity(), &IcpParams::default()),
            Err(Error::AlignmentFailed(_))
        ));
    }
}
