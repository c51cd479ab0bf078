use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Relative spread below which the source points count as collinear.
const COLLINEAR_TOL: f64 = 1e-12;

/// Least-squares rigid transform with `target ≈ T · source` (Kabsch with
/// reflection correction).
pub fn estimate_transform_svd(source: &[Point3<f64>], target: &[Point3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate(format!("need 3 point pairs, got {}", source.len())));
    }
    let n = source.len() as f64;
    let cs: Vector3<f64> = source.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let ct: Vector3<f64> = target.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let a = s.coords - cs;
        let b = t.coords - ct;
        scatter += a * a.transpose();
        h += a * b.transpose();
    }
    let mut ev = SymmetricEigen::new(scatter).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= f64::MIN_POSITIVE || ev[1] <= COLLINEAR_TOL * ev[0] {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = ct - r * cs;
    Ok(RigidTransform::from_matrix(&r, t))
}
