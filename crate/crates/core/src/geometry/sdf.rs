use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::pose::Pose;
use crate::error::{Error, Result};

/// Box with its frame given relative to some parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: Pose,
    pub half_extent: Vector3<f64>,
}

impl OrientedBox {
    pub fn new(pose: Pose, half_extent: Vector3<f64>) -> Result<Self> {
        if half_extent.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::domain(format!(
                "box half extents must be positive, got {half_extent:?}"
            )));
        }
        Ok(Self { pose, half_extent })
    }

    pub fn centered(center: Vector3<f64>, half_extent: Vector3<f64>) -> Result<Self> {
        Self::new(Pose::from_translation(center), half_extent)
    }

    /// Exterior distance from a parent-frame point; zero inside or on the box.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        local_distance(&self.pose.inverse_transform_point(p), &self.half_extent)
    }

    /// Gradient of [`OrientedBox::distance`] with respect to the parent-frame point.
    pub fn distance_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let local = self.pose.inverse_transform_point(p);
        self.pose.transform_vector(&local_distance_gradient(&local, &self.half_extent))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.distance(p) == 0.0
    }
}

/// `|max(|x| - h, 0)|` for a point already in the box frame.
pub fn local_distance(x: &Vector3<f64>, h: &Vector3<f64>) -> f64 {
    x.abs().zip_map(h, |a, b| (a - b).max(0.0)).norm()
}

/// Gradient of [`local_distance`]. On the box boundary the derivative taken
/// from outside is returned: the normalized outward normal of the touching
/// faces. Strictly inside the gradient is zero.
pub fn local_distance_gradient(x: &Vector3<f64>, h: &Vector3<f64>) -> Vector3<f64> {
    let q = x.abs().zip_map(h, |a, b| (a - b).max(0.0));
    let n = q.norm();
    if n > 0.0 {
        return Vector3::from_fn(|c, _| q[c] * sign(x[c]) / n);
    }
    let faces = Vector3::from_fn(|c, _| if x[c].abs() == h[c] { sign(x[c]) } else { 0.0 });
    let len = faces.norm();
    if len > 0.0 {
        faces / len
    } else {
        faces
    }
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Mean exterior distance of the cloud from a box whose parent frame sits at
/// `parent` in the world.
pub fn box_sdf(cloud: &PointCloud, shape: &OrientedBox, parent: &Pose) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::domain("box SDF of an empty cloud"));
    }
    let world = parent.compose(&shape.pose);
    let sum: f64 = cloud
        .points()
        .iter()
        .map(|p| local_distance(&world.inverse_transform_point(p), &shape.half_extent))
        .sum();
    Ok(sum / cloud.len() as f64)
}

/// [`box_sdf`] together with its derivative with respect to the tangent of
/// `parent` (see [`Pose::retract`]).
pub fn box_sdf_with_gradient(cloud: &PointCloud, shape: &OrientedBox, parent: &Pose) -> Result<(f64, Vector6<f64>)> {
    if cloud.is_empty() {
        return Err(Error::domain("box SDF of an empty cloud"));
    }
    let rb = shape.pose.rotation_matrix();
    let rg = parent.rotation_matrix();
    let mut value = 0.0;
    let mut d_lin = Vector3::zeros();
    let mut d_rot = Vector3::zeros();
    for p in cloud.points() {
        let y = parent.inverse_transform_point(p);
        let local = shape.pose.inverse_transform_point(&y);
        value += local_distance(&local, &shape.half_extent);
        // Gradient of the distance in the parent frame.
        let gy = rb * local_distance_gradient(&local, &shape.half_extent);
        d_lin -= rg * gy;
        d_rot += gy.cross(&y);
    }
    let n = cloud.len() as f64;
    let g = Vector6::new(d_lin.x, d_lin.y, d_lin.z, d_rot.x, d_rot.y, d_rot.z) / n;
    Ok((value / n, g))
}
