use nalgebra::{Vector3, Vector6};

use super::{sigmoid, CriterionEvaluator, Evaluation};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hierarchy::INTENTION;
use crate::scene::Scene;

/// Intent-match classifier.
///
/// The base score `sigma(C_n (rho_th - d))` uses the distance `d` from the
/// grasp center to the nearest affordance region labelled with the scene's
/// intent (`sigma(-C_n rho_th)` if none is). It is multiplied by the gate
/// `sigma(C_gate (gate_radius - d_cloud))`, which drives the score to zero
/// for grasps farther than `gate_radius` from the target cloud.
#[derive(Debug, Clone, Copy, Default)]
pub struct Intention;

fn intent(scene: &Scene) -> Result<&str> {
    scene
        .intent
        .as_deref()
        .ok_or_else(|| Error::config("the intention criterion needs an intent label in the scene"))
}

pub fn intention_probability(pose: &Pose, scene: &Scene) -> Result<f64> {
    Ok(Intention.evaluate(pose, scene)?.probability)
}

impl CriterionEvaluator for Intention {
    fn id(&self) -> &str {
        INTENTION
    }

    fn evaluate(&self, pose: &Pose, scene: &Scene) -> Result<Evaluation> {
        let label = intent(scene)?;
        let params = &scene.params;
        let t = pose.translation();

        let nearest_region = scene
            .affordance_regions
            .iter()
            .filter(|r| r.intents.iter().any(|i| i == label))
            .map(|r| (r.region.distance(t), r))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let (base, d_base) = match nearest_region {
            Some((d, r)) => {
                let b = sigmoid(params.c_n * (params.rho_th - d));
                (b, r.region.distance_gradient(t) * (-params.c_n * b * (1.0 - b)))
            }
            None => (sigmoid(-params.c_n * params.rho_th), Vector3::zeros()),
        };

        let (gate, d_gate) = match scene.target_cloud.nearest(t) {
            Some((i, d)) => {
                let g = sigmoid(params.c_gate * (params.gate_radius - d));
                let dir = if d > 0.0 {
                    (t - scene.target_cloud.points()[i]) / d
                } else {
                    Vector3::zeros()
                };
                (g, dir * (-params.c_gate * g * (1.0 - g)))
            }
            None => (0.0, Vector3::zeros()),
        };

        let lin = d_base * gate + d_gate * base;
        Ok(Evaluation {
            probability: base * gate,
            gradient: Vector6::new(lin.x, lin.y, lin.z, 0.0, 0.0, 0.0),
        })
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        intent(scene).map(|_| ())
    }
}
