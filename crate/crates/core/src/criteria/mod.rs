//! Criterion evaluators: differentiable probabilities that a grasp pose
//! satisfies one criterion in a scene.
//!
//! Every evaluator returns a probability in `[0, 1]` and its derivative with
//! respect to the pose tangent (see [`Pose::retract`]): three translation
//! components in the world frame, then three rotation components about the
//! gripper's own axes.

mod collision;
mod execution;
mod intention;
mod stability;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

pub use collision::{
    collision_free_probability, collision_probability_from_mean_distance, mean_gripper_sdf, penetrating_points, Collision,
};
pub use execution::{execution_diagnostics, execution_probability, Execution, ExecutionBranch, ExecutionDiagnostics};
pub use intention::{intention_probability, Intention};
pub use stability::{stability_probability, stability_score, Stability};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Pose, TangentVector};
use crate::hierarchy::{COLLISION, EXECUTION, INTENTION, STABILITY};
use crate::scene::Scene;

/// Scale coefficients and thresholds shared by the built-in evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    /// Scale of the IK-miss branch of the execution classifier.
    pub c_m: f64,
    /// Scale of the manipulability branch.
    pub c_w: f64,
    pub c_c: f64,
    pub c_s: f64,
    pub c_n: f64,
    /// Lowest acceptable manipulability.
    pub omega_th: f64,
    /// Collision threshold on the mean gripper SDF, meters.
    pub d_th: f64,
    /// Stability threshold on the weighted alignment score.
    pub tau_s: f64,
    /// Affordance radius, meters.
    pub rho_th: f64,
    /// IK residual (in `se3_distance` units) below which the pose counts as reached.
    pub eps_pose: f64,
    /// Grasps farther than this from the target cloud get no intention credit.
    pub gate_radius: f64,
    pub c_gate: f64,
    /// Width of the smooth closing-region membership, meters.
    pub sigma_r: f64,
    /// Meters per radian in `se3_distance`.
    pub rot_weight: f64,
    /// Use `sigma(C_c (d_th - d))` instead of `sigma(C_c (d - d_th))`.
    pub paper_literal_collision_sign: bool,
    /// Keep target-object points in the collision cloud.
    pub include_target_in_collision: bool,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            c_m: 5.0,
            c_w: 50.0,
            c_c: 100.0,
            c_s: 5.0,
            c_n: 100.0,
            omega_th: 0.05,
            d_th: 0.02,
            tau_s: 1.0,
            rho_th: 0.05,
            eps_pose: 1e-3,
            gate_radius: 0.03,
            c_gate: 200.0,
            sigma_r: 0.01,
            rot_weight: crate::geometry::pose::DEFAULT_ROT_WEIGHT,
            paper_literal_collision_sign: false,
            include_target_in_collision: false,
        }
    }
}

impl ClassifierParams {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("c_m", self.c_m),
            ("c_w", self.c_w),
            ("c_c", self.c_c),
            ("c_s", self.c_s),
            ("c_n", self.c_n),
            ("c_gate", self.c_gate),
            ("sigma_r", self.sigma_r),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("params.{name}"), format!("must be positive, got {v}")));
            }
        }
        let thresholds = [
            ("omega_th", self.omega_th),
            ("d_th", self.d_th),
            ("tau_s", self.tau_s),
            ("rho_th", self.rho_th),
            ("eps_pose", self.eps_pose),
            ("gate_radius", self.gate_radius),
            ("rot_weight", self.rot_weight),
        ];
        for (name, v) in thresholds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("params.{name}"), format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// World-frame box where grasping serves the listed intents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRegion {
    #[serde(rename = "box")]
    pub region: OrientedBox,
    pub intents: Vec<String>,
}

impl AffordanceRegion {
    pub fn new(region: OrientedBox, intents: Vec<String>) -> Result<Self> {
        if intents.is_empty() {
            return Err(Error::validation("affordance_regions.intents", "at least one intent label is required"));
        }
        Ok(Self { region, intents })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability and tangent gradient of one criterion at one pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub probability: f64,
    pub gradient: Vector6<f64>,
}

/// Contract for a criterion: a deterministic probability in `[0, 1]` and its
/// tangent gradient.
pub trait CriterionEvaluator: Send + Sync {
    fn id(&self) -> &str;

    fn evaluate(&self, pose: &Pose, scene: &Scene) -> Result<Evaluation>;

    fn probability(&self, pose: &Pose, scene: &Scene) -> Result<f64> {
        Ok(self.evaluate(pose, scene)?.probability)
    }

    fn gradient(&self, pose: &Pose, scene: &Scene) -> Result<Vector6<f64>> {
        Ok(self.evaluate(pose, scene)?.gradient)
    }

    /// Checks that the scene carries what this evaluator needs.
    fn check_scene(&self, _scene: &Scene) -> Result<()> {
        Ok(())
    }
}

/// Tangent gradient of any evaluator.
pub fn gradient_of(evaluator: &dyn CriterionEvaluator, pose: &Pose, scene: &Scene) -> Result<Vector6<f64>> {
    evaluator.gradient(pose, scene)
}

/// Central finite-difference gradient along the pose tangent.
pub fn finite_difference_gradient(
    evaluator: &dyn CriterionEvaluator,
    pose: &Pose,
    scene: &Scene,
    h: f64,
) -> Result<Vector6<f64>> {
    let mut g = Vector6::zeros();
    for k in 0..6 {
        let mut e = Vector6::zeros();
        e[k] = h;
        let fp = evaluator.probability(&pose.retract(&TangentVector(e)), scene)?;
        let fm = evaluator.probability(&pose.retract(&TangentVector(-e)), scene)?;
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Criterion with a fixed probability, useful as a placeholder in hierarchies.
#[derive(Debug, Clone)]
pub struct ConstantCriterion {
    pub id: String,
    pub probability: f64,
}

impl CriterionEvaluator for ConstantCriterion {
    fn id(&self) -> &str {
        &self.id
    }

    fn evaluate(&self, _pose: &Pose, _scene: &Scene) -> Result<Evaluation> {
        Ok(Evaluation {
            probability: self.probability,
            gradient: Vector6::zeros(),
        })
    }
}

/// Evaluators keyed by identifier.
#[derive(Clone)]
pub struct EvaluatorRegistry {
    evaluators: BTreeMap<String, Arc<dyn CriterionEvaluator>>,
}

impl std::fmt::Debug for EvaluatorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.evaluators.keys()).finish()
    }
}

impl Default for EvaluatorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl EvaluatorRegistry {
    pub fn empty() -> Self {
        Self {
            evaluators: BTreeMap::new(),
        }
    }

    /// `stability`, `execution`, `collision` and `intention`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Stability));
        r.register(Arc::new(Execution));
        r.register(Arc::new(Collision));
        r.register(Arc::new(Intention));
        debug_assert!([STABILITY, EXECUTION, COLLISION, INTENTION].iter().all(|id| r.contains(id)));
        r
    }

    /// Adds or replaces an evaluator under its own identifier.
    pub fn register(&mut self, evaluator: Arc<dyn CriterionEvaluator>) -> &mut Self {
        self.evaluators.insert(evaluator.id().to_string(), evaluator);
        self
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn CriterionEvaluator>> {
        self.evaluators
            .get(id)
            .ok_or_else(|| Error::validation("hierarchy", format!("unknown criterion `{id}`")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.evaluators.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.evaluators.keys().map(String::as_str)
    }
}
