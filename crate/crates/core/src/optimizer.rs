//! Hybrid evolution-strategy / gradient optimizer over grasp poses, the
//! sample-and-filter baseline, and the initial-grasp samplers.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{Matrix6, SymmetricEigen, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionEvaluator, EvaluatorRegistry};
use crate::error::{Error, Result};
use crate::geometry::{Pose, TangentVector};
use crate::hierarchy::{expected_utility, log_lower_bound, RuleHierarchy, RuleProbabilities, PROB_FLOOR};
use crate::scene::Scene;

// RNG stream layout: sampling uses stream `i`, perturbation at outer
// iteration `t` uses `(t << 32) | i`.
fn stream(iteration: usize, index: usize) -> u64 {
    ((iteration as u64) << 32) | index as u64
}

fn rng_for(seed: u64, iteration: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream(iteration, index));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Outer iterations `T`.
    pub outer_iterations: usize,
    /// Gradient steps per outer iteration `K`.
    pub inner_steps: usize,
    pub step_size: f64,
    /// Tangent-space perturbation covariance, translation first.
    pub covariance: Matrix6<f64>,
    /// Selection size `Q`.
    pub select: usize,
    /// Initial sample count.
    pub batch: usize,
    /// Cap on the norm of one inner step.
    pub step_clip: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 10,
            inner_steps: 5,
            step_size: 0.01,
            covariance: diagonal_covariance(0.01, 0.05),
            select: 50,
            batch: 50,
            step_clip: 0.05,
            seed: 0,
        }
    }
}

/// Diagonal covariance from per-axis standard deviations.
pub fn diagonal_covariance(translation_std: f64, rotation_std: f64) -> Matrix6<f64> {
    let (a, b) = (translation_std * translation_std, rotation_std * rotation_std);
    Matrix6::from_diagonal(&Vector6::new(a, a, a, b, b, b))
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations < 1 {
            return Err(Error::domain("outer iterations must be at least 1"));
        }
        if self.batch < 1 {
            return Err(Error::domain("sample count must be at least 1"));
        }
        if self.select < 1 {
            return Err(Error::domain("selection size must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::domain(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.step_clip > 0.0) {
            return Err(Error::domain(format!("step clip must be positive, got {}", self.step_clip)));
        }
        perturbation_factor(&self.covariance).map(|_| ())
    }
}

/// `L` with `L L^T = covariance`, from the eigendecomposition so that
/// semidefinite matrices (including zero) are accepted.
fn perturbation_factor(cov: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    if !cov.iter().all(|v| v.is_finite()) || (cov - cov.transpose()).amax() > 1e-12 {
        return Err(Error::domain("covariance must be finite and symmetric"));
    }
    let eig = SymmetricEigen::new(*cov);
    let scale = cov.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(Error::domain("covariance must be positive semidefinite"));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix6::from_diagonal(&sqrt))
}

/// How initial grasps are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// A random target point; approach along its inward normal, grasp center
    /// a uniform distance in `[0, standoff]` outside the surface, and a
    /// uniform rotation in `[-jitter, jitter]` about the approach axis.
    SurfaceAntipodal { standoff: f64, jitter: f64 },
    /// Uniform positions in an axis-aligned box, uniform orientations.
    UniformBox { min: [f64; 3], max: [f64; 3] },
    /// Poses read from a JSON list.
    File { path: PathBuf },
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec::SurfaceAntipodal {
            standoff: 0.05,
            jitter: std::f64::consts::PI,
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerSpec::SurfaceAntipodal { standoff, jitter } => {
                if !(*standoff >= 0.0 && standoff.is_finite()) || !(*jitter >= 0.0 && jitter.is_finite()) {
                    return Err(Error::domain("standoff and jitter must be finite and non-negative"));
                }
            }
            SamplerSpec::UniformBox { min, max } => {
                if min.iter().zip(max).any(|(a, b)| !(a <= b)) {
                    return Err(Error::domain("sampling box needs min <= max on every axis"));
                }
            }
            SamplerSpec::File { .. } => {}
        }
        Ok(())
    }
}

/// Rotation whose `+z` axis is `approach`.
fn frame_with_approach(approach: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = approach.normalize();
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

fn uniform_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Draws `n` initial poses. Pose `i` only depends on `(seed, i)`.
pub fn sample_initial(spec: &SamplerSpec, scene: &Scene, n: usize, seed: u64) -> Result<Vec<Pose>> {
    if n < 1 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    spec.validate()?;
    match spec {
        SamplerSpec::SurfaceAntipodal { standoff, jitter } => {
            let cloud = &scene.target_cloud;
            if cloud.is_empty() {
                return Err(Error::domain("surface sampler needs a non-empty target cloud"));
            }
            let normals = cloud
                .normals()
                .ok_or_else(|| Error::config("surface sampler needs target-cloud normals"))?;
            Ok((0..n)
                .map(|i| {
                    let mut rng = rng_for(seed, 0, i);
                    let k = rng.random_range(0..cloud.len());
                    let offset = standoff * rng.random::<f64>();
                    let angle = if *jitter > 0.0 {
                        rng.random_range(-jitter..=*jitter)
                    } else {
                        0.0
                    };
                    let (x, nrm) = (cloud.points()[k], normals[k]);
                    let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle);
                    Pose::new(x + nrm * offset, frame_with_approach(&-nrm) * spin)
                })
                .collect())
        }
        SamplerSpec::UniformBox { min, max } => Ok((0..n)
            .map(|i| {
                let mut rng = rng_for(seed, 0, i);
                let t = Vector3::from_fn(|k, _| {
                    if min[k] < max[k] {
                        rng.random_range(min[k]..max[k])
                    } else {
                        min[k]
                    }
                });
                Pose::new(t, uniform_rotation(&mut rng))
            })
            .collect()),
        SamplerSpec::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let poses: Vec<Pose> = serde_json::from_str(&text).map_err(|e| {
                Error::validation(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
            })?;
            Ok(poses.into_iter().take(n).collect())
        }
    }
}

/// Probabilities, expected utility and lower bound of one pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspScore {
    /// Probability of each criterion, keyed by identifier.
    pub criteria: BTreeMap<String, f64>,
    /// Rule satisfaction probabilities `q_i`, highest priority first.
    pub rules: Vec<f64>,
    pub utility: f64,
    pub lower_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Sampled,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub pose: Pose,
    pub score: GraspScore,
    /// Outer iteration that produced the pose (0 for the initial sample).
    pub iteration: usize,
    pub origin: Origin,
}

impl Grasp {
    /// Whether the grasp survived from before `iteration`.
    pub fn is_carried(&self, iteration: usize) -> bool {
        self.iteration < iteration
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraspBatch {
    pub grasps: Vec<Grasp>,
}

impl GraspBatch {
    pub fn len(&self) -> usize {
        self.grasps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grasps.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.grasps.iter().map(|g| g.pose).collect()
    }

    pub fn best(&self) -> Option<&Grasp> {
        self.grasps.first()
    }

    /// Mean utility of the first `k` grasps.
    pub fn top_mean_utility(&self, k: usize) -> Option<f64> {
        let k = k.min(self.grasps.len());
        if k == 0 {
            return None;
        }
        Some(self.grasps[..k].iter().map(|g| g.score.utility).sum::<f64>() / k as f64)
    }

    /// Stable descending sort by utility, then truncation to `q`.
    pub fn select(&mut self, q: usize) {
        self.grasps.sort_by(|a, b| b.score.utility.total_cmp(&a.score.utility));
        self.grasps.truncate(q);
    }
}

/// A scene, a hierarchy, and the evaluator for every criterion it names.
#[derive(Clone)]
pub struct Objective<'a> {
    scene: &'a Scene,
    hierarchy: RuleHierarchy,
    evaluators: Vec<Vec<Arc<dyn CriterionEvaluator>>>,
}

impl std::fmt::Debug for Objective<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective").field("hierarchy", &self.hierarchy).finish()
    }
}

impl<'a> Objective<'a> {
    pub fn new(scene: &'a Scene, hierarchy: &RuleHierarchy, registry: &EvaluatorRegistry) -> Result<Self> {
        let evaluators = hierarchy
            .rules()
            .iter()
            .map(|r| {
                r.criteria
                    .iter()
                    .map(|id| {
                        let e = registry.get(id)?;
                        e.check_scene(scene)?;
                        Ok(Arc::clone(e))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scene,
            hierarchy: hierarchy.clone(),
            evaluators,
        })
    }

    /// The scene's own hierarchy with the built-in evaluators.
    pub fn for_scene(scene: &'a Scene) -> Result<Self> {
        Self::new(scene, &scene.hierarchy, &EvaluatorRegistry::builtin())
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    pub fn hierarchy(&self) -> &RuleHierarchy {
        &self.hierarchy
    }

    pub fn score(&self, pose: &Pose) -> Result<GraspScore> {
        let mut criteria = BTreeMap::new();
        let mut grouped = Vec::with_capacity(self.evaluators.len());
        for (rule, evals) in self.hierarchy.rules().iter().zip(&self.evaluators) {
            let mut ps = Vec::with_capacity(evals.len());
            for (id, e) in rule.criteria.iter().zip(evals) {
                let p = e.probability(pose, self.scene)?;
                criteria.insert(id.clone(), p);
                ps.push(p);
            }
            grouped.push(ps);
        }
        let probs = RuleProbabilities::from_criteria(grouped)?;
        Ok(GraspScore {
            criteria,
            rules: probs.rule().to_vec(),
            utility: expected_utility(&probs)?,
            lower_bound: log_lower_bound(&probs),
        })
    }

    /// `grad L = sum_j grad p_j / max(p_j, eps)` in the pose tangent.
    pub fn lower_bound_gradient(&self, pose: &Pose) -> Result<Vector6<f64>> {
        let mut g = Vector6::zeros();
        for e in self.evaluators.iter().flatten() {
            let ev = e.evaluate(pose, self.scene)?;
            g += ev.gradient / ev.probability.max(PROB_FLOOR);
        }
        Ok(g)
    }

    fn score_all(&self, poses: Vec<Pose>, iteration: usize, origin: Origin) -> Result<Vec<Grasp>> {
        poses
            .into_par_iter()
            .map(|pose| {
                Ok(Grasp {
                    score: self.score(&pose)?,
                    pose,
                    iteration,
                    origin,
                })
            })
            .collect()
    }
}

fn clip(step: Vector6<f64>, max_norm: f64) -> Vector6<f64> {
    let n = step.norm();
    if n > max_norm {
        step * (max_norm / n)
    } else {
        step
    }
}

/// `K` clipped ascent steps on the lower bound for each pose independently.
pub fn inner_gradient_ascent(
    objective: &Objective<'_>,
    poses: &[Pose],
    steps: usize,
    step_size: f64,
    step_clip: f64,
) -> Result<Vec<Pose>> {
    poses
        .par_iter()
        .map(|pose| {
            let mut p = *pose;
            for _ in 0..steps {
                let g = objective.lower_bound_gradient(&p)?;
                p = p.retract(&TangentVector(clip(g * step_size, step_clip)));
            }
            Ok(p)
        })
        .collect()
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub best_utility: f64,
    pub mean_utility: f64,
    /// Rule probabilities of the best grasp.
    pub best_rules: Vec<f64>,
    pub candidates: usize,
}

impl IterationStats {
    fn of(batch: &GraspBatch, iteration: usize, candidates: usize) -> Self {
        let n = batch.len().max(1) as f64;
        Self {
            iteration,
            best_utility: batch.best().map_or(f64::NAN, |g| g.score.utility),
            mean_utility: batch.grasps.iter().map(|g| g.score.utility).sum::<f64>() / n,
            best_rules: batch.best().map(|g| g.score.rules.clone()).unwrap_or_default(),
            candidates,
        }
    }
}

/// Writes iteration statistics as CSV: `iteration,best_utility,mean_utility,candidates,rule_1..rule_N`.
pub fn write_stats_csv<W: std::io::Write>(stats: &[IterationStats], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = stats.iter().map(|s| s.best_rules.len()).max().unwrap_or(0);
    let mut header = vec!["iteration".to_string(), "best_utility".into(), "mean_utility".into(), "candidates".into()];
    header.extend((1..=n).map(|i| format!("rule_{i}")));
    w.write_record(&header)?;
    for s in stats {
        let mut row = vec![
            s.iteration.to_string(),
            s.best_utility.to_string(),
            s.mean_utility.to_string(),
            s.candidates.to_string(),
        ];
        row.extend((0..n).map(|i| s.best_rules.get(i).map_or(String::new(), f64::to_string)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Final selection plus the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRun {
    pub batch: GraspBatch,
    pub stats: Vec<IterationStats>,
    /// Poses scored by the expected utility.
    pub candidates: usize,
    /// Lower-bound gradient evaluations.
    pub gradient_evaluations: usize,
}

fn pose_key(p: &Pose) -> [u64; 7] {
    // `+ 0.0` folds -0.0 into 0.0 so that equal poses share a key.
    let t = p.translation();
    let q = p.rotation().quaternion();
    [t.x, t.y, t.z, q.w, q.i, q.j, q.k].map(|v| (v + 0.0).to_bits())
}

/// The candidates of outer iteration `t` before selection: `current`
/// followed by its perturbed and refined children, minus exact duplicates.
/// Also returns the number of new candidates.
pub fn candidate_pool(
    objective: &Objective<'_>,
    config: &OptimizerConfig,
    current: &GraspBatch,
    t: usize,
) -> Result<(GraspBatch, usize)> {
    config.validate()?;
    let factor = perturbation_factor(&config.covariance)?;
    pool_with_factor(objective, config, &factor, current, t)
}

fn pool_with_factor(
    objective: &Objective<'_>,
    config: &OptimizerConfig,
    factor: &Matrix6<f64>,
    current: &GraspBatch,
    t: usize,
) -> Result<(GraspBatch, usize)> {
    let perturbed: Vec<Pose> = current
        .grasps
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng = rng_for(config.seed, t, i);
            let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            g.pose.retract(&TangentVector(factor * z))
        })
        .collect();
    let refined = inner_gradient_ascent(objective, &perturbed, config.inner_steps, config.step_size, config.step_clip)?;

    let mut seen: HashSet<[u64; 7]> = current.grasps.iter().map(|g| pose_key(&g.pose)).collect();
    let fresh: Vec<Pose> = refined.into_iter().filter(|p| seen.insert(pose_key(p))).collect();
    let count = fresh.len();
    let mut pool = current.clone();
    pool.grasps.extend(objective.score_all(fresh, t, Origin::Perturbed)?);
    Ok((pool, count))
}

/// Evolution-strategy outer loop with gradient refinement on the lower bound.
///
/// Each outer iteration perturbs the current set with tangent noise of
/// covariance `config.covariance`, refines the perturbed poses with
/// `inner_steps` ascent steps, appends them after the current set (exact
/// duplicates of an earlier candidate are dropped) and keeps the top
/// `config.select` by expected utility.
pub fn grace_opt(objective: &Objective<'_>, config: &OptimizerConfig, sampler: &SamplerSpec) -> Result<OptimizationRun> {
    config.validate()?;
    let factor = perturbation_factor(&config.covariance)?;
    let initial = sample_initial(sampler, objective.scene(), config.batch, config.seed)?;
    let mut current = GraspBatch {
        grasps: objective.score_all(initial, 0, Origin::Sampled)?,
    };
    let mut candidates = current.len();
    let mut gradient_evaluations = 0;
    let mut stats = vec![{
        let mut sorted = current.clone();
        sorted.select(usize::MAX);
        IterationStats::of(&sorted, 0, candidates)
    }];

    for t in 1..=config.outer_iterations {
        let (pool, fresh) = pool_with_factor(objective, config, &factor, &current, t)?;
        gradient_evaluations += current.len() * config.inner_steps;
        candidates += fresh;
        current = pool;
        current.select(config.select);
        stats.push(IterationStats::of(&current, t, candidates));
    }

    Ok(OptimizationRun {
        batch: current,
        stats,
        candidates,
        gradient_evaluations,
    })
}

/// Samples `n` poses, scores each once and keeps the top `q`.
pub fn filter_baseline(objective: &Objective<'_>, sampler: &SamplerSpec, n: usize, q: usize, seed: u64) -> Result<OptimizationRun> {
    if n < 1 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    if q < 1 {
        return Err(Error::domain("selection size must be at least 1"));
    }
    if n < q {
        return Err(Error::domain(format!("sample count {n} is smaller than selection size {q}")));
    }
    let poses = sample_initial(sampler, objective.scene(), n, seed)?;
    let mut batch = GraspBatch {
        grasps: objective.score_all(poses, 0, Origin::Sampled)?,
    };
    batch.select(q);
    let stats = vec![IterationStats::of(&batch, 0, n)];
    Ok(OptimizationRun {
        batch,
        stats,
        candidates: n,
        gradient_evaluations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{sigmoid, ConstantCriterion, Evaluation};
    use crate::geometry::PointCloud;
    use crate::scene::tests_support::tiny_scene;

    /// `p = sigma(-|t|^2)`.
    struct Bowl;

    impl CriterionEvaluator for Bowl {
        fn id(&self) -> &str {
            "bowl"
        }

        fn evaluate(&self, pose: &Pose, _scene: &Scene) -> Result<Evaluation> {
            let t = pose.translation();
            let p = sigmoid(-t.norm_squared());
            let g = t * (-2.0 * p * (1.0 - p));
            Ok(Evaluation {
                probability: p,
                gradient: Vector6::new(g.x, g.y, g.z, 0.0, 0.0, 0.0),
            })
        }
    }

    fn registry_with(e: Arc<dyn CriterionEvaluator>) -> EvaluatorRegistry {
        let mut r = EvaluatorRegistry::builtin();
        r.register(e);
        r
    }

    fn sphere_scene() -> Scene {
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        let n = 400;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let v = Vector3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
            pts.push(v);
            normals.push(v);
        }
        let mut scene = tiny_scene();
        scene.target_cloud = PointCloud::with_normals(pts, normals).unwrap();
        scene
    }

    #[test]
    fn surface_samples_sit_on_their_approach_axis() {
        let scene = sphere_scene();
        let spec = SamplerSpec::default();
        let poses = sample_initial(&spec, &scene, 50, 7).unwrap();
        assert_eq!(poses.len(), 50);
        for p in &poses {
            let approach = p.rotation() * Vector3::z();
            // The surface point along the approach axis of the unit sphere.
            let t = p.translation();
            let b = t.dot(&approach);
            let c = t.norm_squared() - 1.0;
            let s = -b - (b * b - c).max(0.0).sqrt();
            assert!((-1e-9..=0.05 + 1e-6).contains(&s), "{s}");
        }
        assert_eq!(poses, sample_initial(&spec, &scene, 50, 7).unwrap());
        assert_ne!(poses, sample_initial(&spec, &scene, 50, 8).unwrap());
    }

    #[test]
    fn surface_sampler_needs_points() {
        let mut scene = tiny_scene();
        scene.target_cloud = PointCloud::default();
        assert!(matches!(
            sample_initial(&SamplerSpec::default(), &scene, 3, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn file_sampler_returns_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        let poses = vec![
            Pose::from_translation(Vector3::new(0.1, 0.0, 0.0)),
            Pose::identity(),
            Pose::from_translation(Vector3::new(0.0, 0.2, 0.3)),
        ];
        std::fs::write(&path, serde_json::to_string(&poses).unwrap()).unwrap();
        let got = sample_initial(&SamplerSpec::File { path }, &tiny_scene(), 50, 0).unwrap();
        assert_eq!(got, poses);
    }

    #[test]
    fn zero_inner_steps_is_identity() {
        let scene = tiny_scene();
        let obj = Objective::for_scene(&scene).unwrap();
        let poses = sample_initial(&SamplerSpec::default(), &scene, 5, 1).unwrap();
        assert_eq!(inner_gradient_ascent(&obj, &poses, 0, 0.01, 0.05).unwrap(), poses);
    }

    #[test]
    fn ascent_descends_the_bowl() {
        let scene = tiny_scene();
        let reg = registry_with(Arc::new(Bowl));
        let h = RuleHierarchy::new(vec![vec!["bowl"]]).unwrap();
        let obj = Objective::new(&scene, &h, &reg).unwrap();
        let start = Pose::from_translation(Vector3::new(0.6, -0.4, 0.3));
        let out = inner_gradient_ascent(&obj, &[start], 100, 0.05, 0.05).unwrap();
        assert!(out[0].translation().norm() < start.translation().norm());

        // Single steps with halving step size never lower L on this landscape.
        let mut p = start;
        let mut eta = 0.05;
        for _ in 0..20 {
            let before = obj.score(&p).unwrap().lower_bound;
            let mut next;
            loop {
                next = inner_gradient_ascent(&obj, &[p], 1, eta, 0.05).unwrap()[0];
                if obj.score(&next).unwrap().lower_bound >= before {
                    break;
                }
                eta *= 0.5;
            }
            p = next;
        }
        assert!(p.translation().norm() < start.translation().norm());
    }

    #[test]
    fn selection_uses_utility_not_lower_bound() {
        // `a` is strong on the top rule, `b` is more balanced:
        // L prefers b, U prefers a.
        let scene = tiny_scene();
        let h = RuleHierarchy::new(vec![vec!["hi"], vec!["lo"]]).unwrap();
        let mk = |hi: f64, lo: f64| {
            let mut r = EvaluatorRegistry::empty();
            r.register(Arc::new(ConstantCriterion { id: "hi".into(), probability: hi }));
            r.register(Arc::new(ConstantCriterion { id: "lo".into(), probability: lo }));
            r
        };
        let ra = mk(0.99, 0.05);
        let rb = mk(0.8, 0.3);
        let sa = Objective::new(&scene, &h, &ra).unwrap().score(&Pose::identity()).unwrap();
        let sb = Objective::new(&scene, &h, &rb).unwrap().score(&Pose::identity()).unwrap();
        assert!(sa.lower_bound < sb.lower_bound);
        assert!(sa.utility > sb.utility);
        let mut batch = GraspBatch {
            grasps: vec![
                Grasp { pose: Pose::identity(), score: sb, iteration: 0, origin: Origin::Sampled },
                Grasp { pose: Pose::identity(), score: sa.clone(), iteration: 0, origin: Origin::Sampled },
            ],
        };
        batch.select(1);
        assert_eq!(batch.grasps[0].score, sa);
    }

    #[test]
    fn stable_sort_keeps_generation_order_on_ties() {
        let score = GraspScore { criteria: BTreeMap::new(), rules: vec![0.5], utility: -1.5, lower_bound: 0.0 };
        let mut batch = GraspBatch {
            grasps: (0..5)
                .map(|i| Grasp {
                    pose: Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                    score: score.clone(),
                    iteration: 0,
                    origin: Origin::Sampled,
                })
                .collect(),
        };
        batch.select(3);
        let xs: Vec<f64> = batch.grasps.iter().map(|g| g.pose.translation().x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn degenerate_configuration_reduces_to_filter() {
        let scene = tiny_scene();
        let obj = Objective::for_scene(&scene).unwrap();
        let spec = SamplerSpec::default();
        let config = OptimizerConfig {
            outer_iterations: 1,
            inner_steps: 0,
            covariance: Matrix6::zeros(),
            batch: 30,
            select: 10,
            seed: 4,
            ..Default::default()
        };
        let g = grace_opt(&obj, &config, &spec).unwrap();
        let f = filter_baseline(&obj, &spec, 30, 10, 4).unwrap();
        assert_eq!(g.batch, f.batch);
    }

    #[test]
    fn constant_probabilities_reduce_to_filter() {
        let scene = tiny_scene();
        let mut reg = EvaluatorRegistry::empty();
        reg.register(Arc::new(ConstantCriterion { id: "c".into(), probability: 0.4 }));
        let h = RuleHierarchy::new(vec![vec!["c"]]).unwrap();
        let obj = Objective::new(&scene, &h, &reg).unwrap();
        let spec = SamplerSpec::default();
        let config = OptimizerConfig { batch: 20, select: 20, seed: 2, outer_iterations: 3, ..Default::default() };
        let g = grace_opt(&obj, &config, &spec).unwrap();
        let f = filter_baseline(&obj, &spec, 20, 20, 2).unwrap();
        assert_eq!(g.batch, f.batch);
    }

    #[test]
    fn elitism_and_determinism() {
        let scene = tiny_scene();
        let obj = Objective::for_scene(&scene).unwrap();
        let config = OptimizerConfig { batch: 12, select: 12, outer_iterations: 4, inner_steps: 2, seed: 9, ..Default::default() };
        let a = grace_opt(&obj, &config, &SamplerSpec::default()).unwrap();
        for w in a.stats.windows(2) {
            assert!(w[1].best_utility >= w[0].best_utility);
        }
        let b = grace_opt(&obj, &config, &SamplerSpec::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.batch.grasps.windows(2).all(|w| w[0].score.utility >= w[1].score.utility));
        for g in &a.batch.grasps {
            assert!((-8.0..=-1.0).contains(&g.score.utility));
        }
    }

    #[test]
    fn filter_rejects_bad_sizes() {
        let scene = tiny_scene();
        let obj = Objective::for_scene(&scene).unwrap();
        assert!(matches!(filter_baseline(&obj, &SamplerSpec::default(), 5, 10, 0), Err(Error::Domain(_))));
        assert!(matches!(filter_baseline(&obj, &SamplerSpec::default(), 0, 0, 0), Err(Error::Domain(_))));
        let all = filter_baseline(&obj, &SamplerSpec::default(), 7, 7, 0).unwrap();
        assert_eq!(all.batch.len(), 7);
    }

    #[test]
    fn config_validation() {
        OptimizerConfig::default().validate().unwrap();
        let mut c = OptimizerConfig::default();
        c.covariance[(0, 0)] = -1.0;
        assert!(c.validate().is_err());
        let c = OptimizerConfig { outer_iterations: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = OptimizerConfig { step_size: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn stats_csv_has_one_row_per_iteration() {
        let scene = tiny_scene();
        let obj = Objective::for_scene(&scene).unwrap();
        let config = OptimizerConfig { batch: 6, select: 6, outer_iterations: 2, inner_steps: 1, ..Default::default() };
        let run = grace_opt(&obj, &config, &SamplerSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&run.stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
        assert!(text.starts_with("iteration,best_utility,mean_utility,candidates,rule_1,rule_2,rule_3"));
    }
}
