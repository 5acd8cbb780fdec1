use nalgebra::{Vector3, Vector6};

use super::{sigmoid, CriterionEvaluator, Evaluation};
use crate::error::{Error, Result};
use crate::geometry::sdf::{local_distance, local_distance_gradient};
use crate::geometry::Pose;
use crate::hierarchy::STABILITY;
use crate::scene::Scene;

/// Analytic grasp-stability score.
///
/// Each target point gets a smooth membership `w = exp(-rho^2 / (2 sigma_r^2))`
/// in the closing region, where `rho` is its exterior distance to the
/// closing-region box, and an alignment `a = (n . c)^2` between its normal and
/// the world-frame closing axis. The score is `A = sum w a` and the
/// probability is `sigma(C_s (A - tau_s))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stability;

/// The weighted alignment score `A` and its tangent gradient.
pub fn stability_score(pose: &Pose, scene: &Scene) -> Result<(f64, Vector6<f64>)> {
    let normals = scene
        .target_cloud
        .normals()
        .ok_or_else(|| Error::config("the stability criterion needs target-cloud normals"))?;
    let region = scene.gripper.closing_region();
    let axis = scene.gripper.closing_axis();
    let rg = pose.rotation_matrix();
    let rb = region.pose.rotation_matrix();
    let closing = rg * axis;
    let inv_s2 = 1.0 / (scene.params.sigma_r * scene.params.sigma_r);

    let mut score = 0.0;
    let mut d_lin = Vector3::zeros();
    let mut d_rot = Vector3::zeros();
    for (x, n) in scene.target_cloud.points().iter().zip(normals) {
        let y = pose.inverse_transform_point(x);
        let local = region.pose.inverse_transform_point(&y);
        let rho = local_distance(&local, &region.half_extent);
        let w = (-0.5 * rho * rho * inv_s2).exp();
        if w == 0.0 {
            continue;
        }
        let dot = n.dot(&closing);
        let a = dot * dot;
        score += w * a;

        // d w = -w rho / sigma_r^2 d rho, with d rho from the box distance.
        let gy = rb * local_distance_gradient(&local, &region.half_extent);
        let dw = -w * rho * inv_s2;
        d_lin += (rg * gy) * (-dw * a);
        d_rot += gy.cross(&y) * (dw * a);
        // d a / d omega = 2 (n . c) (axis x R_g^T n).
        d_rot += axis.cross(&(rg.transpose() * n)) * (2.0 * dot * w);
    }
    Ok((score, Vector6::new(d_lin.x, d_lin.y, d_lin.z, d_rot.x, d_rot.y, d_rot.z)))
}

pub fn stability_probability(pose: &Pose, scene: &Scene) -> Result<f64> {
    Ok(Stability.evaluate(pose, scene)?.probability)
}

impl CriterionEvaluator for Stability {
    fn id(&self) -> &str {
        STABILITY
    }

    fn evaluate(&self, pose: &Pose, scene: &Scene) -> Result<Evaluation> {
        let (score, dscore) = stability_score(pose, scene)?;
        let c_s = scene.params.c_s;
        let p = sigmoid(c_s * (score - scene.params.tau_s));
        Ok(Evaluation {
            probability: p,
            gradient: dscore * (c_s * p * (1.0 - p)),
        })
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.target_cloud.normals().is_none() {
            return Err(Error::config("the stability criterion needs target-cloud normals"));
        }
        Ok(())
    }
}
