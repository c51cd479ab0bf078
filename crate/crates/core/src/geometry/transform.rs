use nalgebra::{Isometry3, Matrix3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid SE(3) motion. Used both for camera-to-world poses and for
/// registration results mapping a source frame into a target frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", from = "TransformRepr")]
pub struct RigidTransform {
    iso: Isometry3<f64>,
}

/// Serialized form: translation and an `[x, y, z, w]` quaternion.
#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let (translation, rotation) = t.to_tum();
        Self { translation, rotation }
    }
}

impl From<TransformRepr> for RigidTransform {
    fn from(r: TransformRepr) -> Self {
        RigidTransform::from_tum(r.translation, r.rotation)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            iso: Isometry3::identity(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            iso: Isometry3::from_parts(Translation3::from(translation), rotation),
        }
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self { iso }
    }

    /// Builds a transform from a rotation matrix; the matrix is projected
    /// onto SO(3) so slightly non-orthonormal inputs are accepted.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_eps(rotation, 1e-12, 100, nalgebra::Rotation3::identity());
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation about `axis` by `angle` radians followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        Self::new(rot, translation)
    }

    /// TUM / g2o ordering: `tx ty tz qx qy qz qw`. The quaternion is renormalized.
    pub fn from_tum(t: [f64; 3], q: [f64; 4]) -> Self {
        let quat = UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[0], q[1], q[2]));
        Self::new(quat, Vector3::new(t[0], t[1], t[2]))
    }

    /// Returns `([tx, ty, tz], [qx, qy, qz, qw])` with `qw >= 0`.
    pub fn to_tum(&self) -> ([f64; 3], [f64; 4]) {
        let t = self.translation();
        let mut q = *self.iso.rotation.quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        ([t.x, t.y, t.z], [q.i, q.j, q.k, q.w])
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.iso.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            iso: self.iso * other.iso,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        RigidTransform {
            iso: self.iso.inverse(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.iso.transform_point(p)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation.transform_vector(v)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.iso.rotation.quaternion();
        2.0 * q.vector().norm().atan2(q.scalar().abs())
    }

    pub fn translation_norm(&self) -> f64 {
        self.iso.translation.vector.norm()
    }

    /// Translation and rotation distance between two poses, as
    /// `(meters, radians)` of `self⁻¹ ∘ other`.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (delta.translation_norm(), delta.rotation_angle())
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tum_round_trip_keeps_positive_w() {
        let t = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 2.5, Vector3::new(0.1, -0.2, 3.0));
        let (tr, q) = t.to_tum();
        assert!(q[3] >= 0.0);
        let back = RigidTransform::from_tum(tr, q);
        let (dt, dr) = t.distance_to(&back);
        assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let t = RigidTransform::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 1.1, Vector3::zeros());
        let r = t.rotation_matrix();
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }
}
