use std::borrow::Cow;

use nalgebra::Vector6;

use super::{sigmoid, ClassifierParams, CriterionEvaluator, Evaluation};
use crate::error::Result;
use crate::geometry::sdf::box_sdf_with_gradient;
use crate::geometry::{PointCloud, Pose};
use crate::hierarchy::COLLISION;
use crate::scene::Scene;

/// Collision-free classifier on the mean box SDF of the three gripper boxes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Collision;

/// `sigma(C_c (d - d_th))`, or the inverted `sigma(C_c (d_th - d))` when
/// `paper_literal_collision_sign` is set.
pub fn collision_probability_from_mean_distance(mean_distance: f64, params: &ClassifierParams) -> f64 {
    sigmoid(params.c_c * signed_margin(mean_distance, params))
}

fn signed_margin(mean_distance: f64, params: &ClassifierParams) -> f64 {
    if params.paper_literal_collision_sign {
        params.d_th - mean_distance
    } else {
        mean_distance - params.d_th
    }
}

fn obstacle_cloud<'a>(scene: &'a Scene) -> Cow<'a, PointCloud> {
    if scene.params.include_target_in_collision {
        Cow::Owned(scene.obstacle_cloud.merged(&scene.target_cloud))
    } else {
        Cow::Borrowed(&scene.obstacle_cloud)
    }
}

/// `(1/3) sum_i d_{R_i}` with the gripper at `pose`, and its tangent gradient.
/// `None` when the collision cloud is empty.
pub fn mean_gripper_sdf(pose: &Pose, scene: &Scene) -> Result<Option<(f64, Vector6<f64>)>> {
    let cloud = obstacle_cloud(scene);
    if cloud.is_empty() {
        return Ok(None);
    }
    let mut value = 0.0;
    let mut grad = Vector6::zeros();
    for b in scene.gripper.boxes() {
        let (v, g) = box_sdf_with_gradient(&cloud, b, pose)?;
        value += v;
        grad += g;
    }
    Ok(Some((value / 3.0, grad / 3.0)))
}

/// Number of collision-cloud points inside at least one gripper box at `pose`.
pub fn penetrating_points(pose: &Pose, scene: &Scene) -> usize {
    obstacle_cloud(scene)
        .points()
        .iter()
        .filter(|x| {
            let local = pose.inverse_transform_point(x);
            scene.gripper.boxes().iter().any(|b| b.contains(&local))
        })
        .count()
}

pub fn collision_free_probability(pose: &Pose, scene: &Scene) -> Result<f64> {
    Ok(Collision.evaluate(pose, scene)?.probability)
}

impl CriterionEvaluator for Collision {
    fn id(&self) -> &str {
        COLLISION
    }

    fn evaluate(&self, pose: &Pose, scene: &Scene) -> Result<Evaluation> {
        let params = &scene.params;
        let Some((mean, dmean)) = mean_gripper_sdf(pose, scene)? else {
            // Nothing to collide with.
            return Ok(Evaluation {
                probability: 1.0,
                gradient: Vector6::zeros(),
            });
        };
        let p = collision_probability_from_mean_distance(mean, params);
        let sign = if params.paper_literal_collision_sign { -1.0 } else { 1.0 };
        Ok(Evaluation {
            probability: p,
            gradient: dmean * (sign * params.c_c * p * (1.0 - p)),
        })
    }
}
