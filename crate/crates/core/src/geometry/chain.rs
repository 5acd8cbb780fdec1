//! Revolute serial chains: forward kinematics, geometric Jacobian,
//! manipulability and damped-least-squares inverse kinematics.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Matrix6xX, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::pose::{se3_distance, Pose, DEFAULT_ROT_WEIGHT};
use crate::error::{Error, Result};

/// One revolute joint in standard Denavit-Hartenberg form:
/// `Rz(theta + offset) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub offset: f64,
    /// `[lo, hi]` in radians.
    pub limits: [f64; 2],
}

impl Joint {
    pub fn new(a: f64, alpha: f64, d: f64, limits: [f64; 2]) -> Self {
        Self {
            a,
            alpha,
            d,
            offset: 0.0,
            limits,
        }
    }

    fn transform(&self, theta: f64) -> Pose {
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta + self.offset);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        let t = rz * Vector3::new(self.a, 0.0, self.d);
        Pose::new(t, rz * rx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainRepr", into = "ChainRepr")]
pub struct SerialChain {
    joints: Vec<Joint>,
    base: Pose,
    tool: Pose,
    ik_seed: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ChainRepr {
    joints: Vec<Joint>,
    #[serde(default)]
    base: Pose,
    #[serde(default)]
    tool: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ik_seed: Option<Vec<f64>>,
}

impl TryFrom<ChainRepr> for SerialChain {
    type Error = Error;
    fn try_from(r: ChainRepr) -> Result<Self> {
        let mut chain = SerialChain::new(r.joints, r.base, r.tool)?;
        if let Some(seed) = r.ik_seed {
            chain = chain.with_ik_seed(seed)?;
        }
        Ok(chain)
    }
}

impl From<SerialChain> for ChainRepr {
    fn from(c: SerialChain) -> Self {
        ChainRepr {
            joints: c.joints,
            base: c.base,
            tool: c.tool,
            ik_seed: c.ik_seed,
        }
    }
}

/// Damped-least-squares settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub rot_weight: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 1e-2,
            max_iterations: 200,
            tolerance: 1e-4,
            rot_weight: DEFAULT_ROT_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub theta: Vec<f64>,
    /// Forward kinematics of `theta`.
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    /// `se3_distance(target, pose)`.
    pub distance: f64,
}

impl SerialChain {
    pub fn new(joints: Vec<Joint>, base: Pose, tool: Pose) -> Result<Self> {
        if joints.len() < 2 {
            return Err(Error::validation("chain.joints", "a chain needs at least 2 joints"));
        }
        for (i, j) in joints.iter().enumerate() {
            let [lo, hi] = j.limits;
            if !(lo <= hi) || [j.a, j.alpha, j.d, j.offset, lo, hi].iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(
                    format!("chain.joints[{i}]"),
                    "parameters must be finite with limits lo <= hi",
                ));
            }
        }
        Ok(Self {
            joints,
            base,
            tool,
            ik_seed: None,
        })
    }

    /// Joint configuration used as the starting point of IK (default:
    /// the middle of every joint range).
    pub fn with_ik_seed(mut self, seed: Vec<f64>) -> Result<Self> {
        self.check_dim(&seed)?;
        self.ik_seed = Some(seed);
        Ok(self)
    }

    /// Planar arm in the base xy-plane with the given link lengths.
    pub fn planar(lengths: &[f64]) -> Result<Self> {
        let joints = lengths.iter().map(|&l| Joint::new(l, 0.0, 0.0, [-PI, PI])).collect();
        Self::new(joints, Pose::identity(), Pose::identity())
    }

    /// Six-joint elbow arm with a spherical wrist: shoulder height 0.3 m,
    /// upper arm and forearm 0.45 m each, and a 0.1 m flange-to-grasp-center
    /// distance on top of the 0.1 m wrist link.
    pub fn six_dof_arm(base: Pose) -> Self {
        let lim = [-PI, PI];
        let joints = vec![
            Joint::new(0.0, FRAC_PI_2, 0.3, lim),
            Joint::new(0.45, 0.0, 0.0, lim),
            Joint { offset: FRAC_PI_2, ..Joint::new(0.0, FRAC_PI_2, 0.0, lim) },
            Joint::new(0.0, -FRAC_PI_2, 0.45, lim),
            Joint::new(0.0, FRAC_PI_2, 0.0, lim),
            Joint::new(0.0, 0.0, 0.1, lim),
        ];
        let tool = Pose::from_translation(Vector3::new(0.0, 0.0, 0.1));
        let seed = vec![0.0, 0.6, -1.2, 0.0, 0.9, 0.0];
        Self::new(joints, base, tool)
            .and_then(|c| c.with_ik_seed(seed))
            .expect("valid arm")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn tool(&self) -> &Pose {
        &self.tool
    }

    pub fn mid_range(&self) -> Vec<f64> {
        self.joints.iter().map(|j| 0.5 * (j.limits[0] + j.limits[1])).collect()
    }

    pub fn ik_seed(&self) -> Vec<f64> {
        self.ik_seed.clone().unwrap_or_else(|| self.mid_range())
    }

    /// Sum of link lengths; no reachable point is farther from the base origin.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.a.hypot(j.d)).sum::<f64>() + self.tool.translation().norm()
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.joints.len() {
            return Err(Error::domain(format!(
                "joint vector has {} entries, chain has {} joints",
                theta.len(),
                self.joints.len()
            )));
        }
        Ok(())
    }

    /// World frames of joints `0..D` (frame `i` carries joint `i+1`'s axis)
    /// and the end-effector pose.
    fn frames(&self, theta: &[f64]) -> (Vec<Pose>, Pose) {
        let mut frames = Vec::with_capacity(self.joints.len());
        let mut current = self.base;
        for (j, &q) in self.joints.iter().zip(theta) {
            frames.push(current);
            current = current.compose(&j.transform(q));
        }
        (frames, current.compose(&self.tool))
    }

    pub fn forward_kinematics(&self, theta: &[f64]) -> Result<Pose> {
        self.check_dim(theta)?;
        Ok(self.frames(theta).1)
    }

    /// Geometric Jacobian in the world frame: linear-velocity rows, then
    /// angular-velocity rows.
    pub fn jacobian(&self, theta: &[f64]) -> Result<Matrix6xX<f64>> {
        self.check_dim(theta)?;
        Ok(self.jacobian_unchecked(theta).0)
    }

    fn jacobian_unchecked(&self, theta: &[f64]) -> (Matrix6xX<f64>, Pose) {
        let (frames, ee) = self.frames(theta);
        let p = ee.translation();
        let mut jac = Matrix6xX::zeros(self.joints.len());
        for (i, f) in frames.iter().enumerate() {
            let z = f.transform_vector(&Vector3::z());
            let v = z.cross(&(p - f.translation()));
            jac.set_column(i, &Vector6::new(v.x, v.y, v.z, z.x, z.y, z.z));
        }
        (jac, ee)
    }

    /// `sqrt(det(J J^T))` on the position rows for chains with fewer than six
    /// joints and on the full Jacobian otherwise. When the block has more rows
    /// than columns the Gram determinant `det(J^T J)` is used; both equal the
    /// product of the block's singular values.
    pub fn manipulability(&self, theta: &[f64]) -> Result<f64> {
        let jac = self.jacobian(theta)?;
        Ok(manipulability_of(&jac))
    }

    /// Damped-least-squares IK from `theta0`, clamping to joint limits after
    /// every step. Returns the best iterate found.
    pub fn solve_ik(&self, target: &Pose, theta0: &[f64], opts: &IkOptions) -> Result<IkSolution> {
        self.check_dim(theta0)?;
        let clamp = |theta: &mut [f64]| {
            for (q, j) in theta.iter_mut().zip(&self.joints) {
                *q = q.clamp(j.limits[0], j.limits[1]);
            }
        };
        let mut theta = theta0.to_vec();
        clamp(&mut theta);
        let (mut jac, mut pose) = self.jacobian_unchecked(&theta);
        let mut dist = se3_distance(target, &pose, opts.rot_weight);
        let mut iterations = 0;
        let mut stalled = 0;
        let lambda2 = opts.damping * opts.damping;
        let n = self.joints.len();

        while dist >= opts.tolerance && iterations < opts.max_iterations {
            iterations += 1;
            let e_t = target.translation() - pose.translation();
            let e_r = (target.rotation() * pose.rotation().inverse()).scaled_axis();
            let err = DVector::from_row_slice(&[e_t.x, e_t.y, e_t.z, e_r.x, e_r.y, e_r.z]);
            let jt = jac.transpose();
            let lhs = &jt * &jac + DMatrix::<f64>::identity(n, n) * lambda2;
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(&jt * &err))) else {
                break;
            };

            // Backtrack until the pose error shrinks.
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..6 {
                let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(q, s)| q + scale * s).collect();
                clamp(&mut cand);
                let (cj, cp) = self.jacobian_unchecked(&cand);
                let cd = se3_distance(target, &cp, opts.rot_weight);
                if cd < dist {
                    accepted = Some((cand, cj, cp, cd));
                    break;
                }
                scale *= 0.5;
            }
            let Some((cand, cj, cp, cd)) = accepted else {
                break;
            };
            stalled = if dist - cd < 1e-9 * dist.max(1e-12) { stalled + 1 } else { 0 };
            theta = cand;
            jac = cj;
            pose = cp;
            dist = cd;
            if stalled >= 10 {
                break;
            }
        }
        Ok(IkSolution {
            theta,
            pose,
            converged: dist < opts.tolerance,
            iterations,
            distance: dist,
        })
    }
}

/// Product of the singular values of the task block selected as in
/// [`SerialChain::manipulability`].
pub fn manipulability_of(jac: &Matrix6xX<f64>) -> f64 {
    let block: DMatrix<f64> = if jac.ncols() < 6 {
        DMatrix::from_iterator(3, jac.ncols(), jac.rows(0, 3).iter().copied())
    } else {
        DMatrix::from_iterator(6, jac.ncols(), jac.iter().copied())
    };
    block.svd(false, false).singular_values.iter().product()
}
