use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Weight converting radians to meters in [`se3_distance`].
pub const DEFAULT_ROT_WEIGHT: f64 = 0.1;

/// Rigid transform: rotation followed by translation.
///
/// The quaternion is kept in the hemisphere with a non-negative scalar part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    translation: [f64; 3],
    /// Scalar first: `[w, x, y, z]`.
    quaternion: [f64; 4],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.quaternion;
        let q = Quaternion::new(w, x, y, z);
        // Stored unit quaternions are kept bit-exact; others are normalized.
        let rotation = if (q.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Pose::new(Vector3::from(r.translation), rotation)
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            translation: p.translation.into(),
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

fn hemisphere(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: hemisphere(rotation),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, UnitQuaternion::identity())
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self::new(Vector3::zeros(), r)
    }

    /// Pose whose rotation matrix has the given columns (frame axes in the
    /// parent frame). The columns are re-orthonormalized.
    pub fn from_axes(translation: Vector3<f64>, x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Self {
        let m = Matrix3::from_columns(&[x, y, z]);
        let rot = nalgebra::Rotation3::from_matrix(&m);
        Self::new(translation, UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self * other`: apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.translation + self.rotation * other.translation,
            self.rotation * other.rotation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(-(inv * self.translation), inv)
    }

    /// Maps a point from this frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a parent-frame point into this frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Moves the pose along a tangent vector. The translation part is added
    /// in the parent frame; the rotation part is applied on the right, i.e.
    /// about the pose's own axes.
    pub fn retract(&self, xi: &TangentVector) -> Pose {
        Pose::new(
            self.translation + xi.translation(),
            self.rotation * UnitQuaternion::from_scaled_axis(xi.rotation()),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }

    pub fn as_point(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }
}

/// 6-vector `(dt, dw)`: translation in meters, rotation vector in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector(pub Vector6<f64>);

impl TangentVector {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self(Vector6::new(
            translation.x,
            translation.y,
            translation.z,
            rotation.x,
            rotation.y,
            rotation.z,
        ))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl std::ops::Neg for TangentVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

/// Geodesic angle of a rotation, in `[0, pi]`.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// `|t_a - t_b| + rot_weight * angle(R_a^T R_b)`.
pub fn se3_distance(a: &Pose, b: &Pose, rot_weight: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let dt = (a.translation - b.translation).norm();
    let rel = a.rotation.inverse() * b.rotation;
    dt + rot_weight * rotation_angle(&rel)
}

/// Derivative of `se3_distance(fixed, moving.retract(xi))` at `xi = 0`.
///
/// Returns the zero subgradient for components whose distance term vanishes.
pub fn se3_distance_gradient(fixed: &Pose, moving: &Pose, rot_weight: f64) -> Vector6<f64> {
    let dt = moving.translation - fixed.translation;
    let n = dt.norm();
    let lin = if n > 0.0 { dt / n } else { Vector3::zeros() };
    let rel = fixed.rotation.inverse() * moving.rotation;
    let phi = hemisphere(rel).scaled_axis();
    let a = phi.norm();
    let ang = if a > 0.0 { phi * (rot_weight / a) } else { Vector3::zeros() };
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
