use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};

/// Rank test for the neighborhood covariance, relative to its largest eigenvalue.
const RANK_EPS: f64 = 1e-12;

/// Per-point normals from the covariance of each point and its `k` nearest
/// neighbors. Normals face the sensor origin; `None` marks a neighborhood
/// whose covariance has rank below 2.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Option<Vector3<f64>>>> {
    if k < 3 {
        return Err(Error::Parameter(format!("normal estimation needs k >= 3, got {k}")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::Parameter(format!(
            "normal estimation with k = {k} needs at least {} points, cloud has {}",
            k + 1,
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.points);
    Ok(cloud
        .points
        .par_iter()
        .map(|p| {
            let nbrs = tree.knn(p, k + 1);
            let n = nbrs.len() as f64;
            let mean = nbrs.iter().fold(Vector3::zeros(), |acc, nb| acc + tree.point(nb.index).coords) / n;
            let mut cov = Matrix3::zeros();
            for nb in &nbrs {
                let d = tree.point(nb.index).coords - mean;
                cov += d * d.transpose();
            }
            smallest_eigenvector(&(cov / n)).map(|normal| {
                if normal.dot(&(-p.coords)) < 0.0 {
                    -normal
                } else {
                    normal
                }
            })
        })
        .collect())
}

/// Unit eigenvector of the smallest eigenvalue, or `None` when the second
/// largest eigenvalue vanishes (collinear or coincident samples).
pub(crate) fn smallest_eigenvector(cov: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let eig = SymmetricEigen::new(*cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[idx[2]];
    let middle = eig.eigenvalues[idx[1]];
    if !(largest > 0.0) || middle <= RANK_EPS * largest {
        return None;
    }
    let v = eig.eigenvectors.column(idx[0]).into_owned();
    Some(v.normalize())
}
