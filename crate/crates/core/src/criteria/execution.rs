use nalgebra::Vector6;
use serde::Serialize;

use super::{sigmoid, CriterionEvaluator, Evaluation};
use crate::error::{Error, Result};
use crate::geometry::chain::{manipulability_of, IkOptions};
use crate::geometry::pose::se3_distance_gradient;
use crate::geometry::{se3_distance, Pose, SerialChain};
use crate::hierarchy::EXECUTION;
use crate::scene::Scene;

/// Reachability and manipulability classifier.
///
/// Solves IK for the grasp. If the reached pose misses the grasp by more than
/// `eps_pose` the probability is `sigma(-C_m d)`; otherwise it is
/// `sigma(C_w (omega - omega_th))` with `omega` the manipulability at the IK
/// solution. The gradient holds the IK solution fixed, so the manipulability
/// branch has zero gradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionBranch {
    Unreached,
    Reached,
}

/// Everything the execution classifier computed for one pose.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionDiagnostics {
    pub ik_converged: bool,
    pub ik_iterations: usize,
    pub theta: Vec<f64>,
    pub reached: Pose,
    pub distance: f64,
    pub manipulability: f64,
    pub branch: ExecutionBranch,
    pub probability: f64,
    /// Jump between the two branches at `distance == eps_pose`:
    /// `|sigma(-C_m eps_pose) - sigma(C_w (omega - omega_th))|`.
    pub discontinuity: f64,
}

fn chain(scene: &Scene) -> Result<&SerialChain> {
    scene
        .chain
        .as_ref()
        .ok_or_else(|| Error::config("the execution criterion needs a robot chain in the scene"))
}

pub fn execution_diagnostics(pose: &Pose, scene: &Scene) -> Result<ExecutionDiagnostics> {
    let chain = chain(scene)?;
    let params = &scene.params;
    let opts = IkOptions {
        rot_weight: params.rot_weight,
        ..IkOptions::default()
    };
    let sol = chain.solve_ik(pose, &chain.ik_seed(), &opts)?;
    let distance = se3_distance(pose, &sol.pose, params.rot_weight);
    let manipulability = manipulability_of(&chain.jacobian(&sol.theta)?);
    let reached_p = sigmoid(params.c_w * (manipulability - params.omega_th));
    let (branch, probability) = if distance > params.eps_pose {
        (ExecutionBranch::Unreached, sigmoid(-params.c_m * distance))
    } else {
        (ExecutionBranch::Reached, reached_p)
    };
    Ok(ExecutionDiagnostics {
        ik_converged: sol.converged,
        ik_iterations: sol.iterations,
        theta: sol.theta,
        reached: sol.pose,
        distance,
        manipulability,
        branch,
        probability,
        discontinuity: (sigmoid(-params.c_m * params.eps_pose) - reached_p).abs(),
    })
}

pub fn execution_probability(pose: &Pose, scene: &Scene) -> Result<f64> {
    Ok(execution_diagnostics(pose, scene)?.probability)
}

impl CriterionEvaluator for Execution {
    fn id(&self) -> &str {
        EXECUTION
    }

    fn evaluate(&self, pose: &Pose, scene: &Scene) -> Result<Evaluation> {
        let d = execution_diagnostics(pose, scene)?;
        let p = d.probability;
        let gradient = match d.branch {
            ExecutionBranch::Unreached => {
                let dd = se3_distance_gradient(&d.reached, pose, scene.params.rot_weight);
                dd * (-scene.params.c_m * p * (1.0 - p))
            }
            ExecutionBranch::Reached => Vector6::zeros(),
        };
        Ok(Evaluation {
            probability: p,
            gradient,
        })
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        chain(scene).map(|_| ())
    }
}
