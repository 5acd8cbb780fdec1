#![allow(dead_code)]

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulegrasp::criteria::{AffordanceRegion, CriterionEvaluator};
use rulegrasp::geometry::{OrientedBox, PointCloud, Pose, SerialChain, TangentVector};
use rulegrasp::hierarchy::RuleHierarchy;
use rulegrasp::scene::Scene;

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-6;
/// Nearest-point switches closer than this put a draw in the kink set.
pub const KINK_MARGIN: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    // Uniform on SO(3) via a normalized Gaussian quaternion.
    loop {
        let q = nalgebra::Quaternion::new(
            gauss(rng),
            gauss(rng),
            gauss(rng),
            gauss(rng),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Random points on the surface of an axis-aligned box, with face normals.
pub fn box_surface_points(rng: &mut ChaCha8Rng, center: Vector3<f64>, half: Vector3<f64>, n: usize) -> PointCloud {
    let areas = [half.y * half.z, half.z * half.x, half.x * half.y];
    let total: f64 = areas.iter().sum();
    let mut pts = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random_range(0.0..total);
        let mut axis = 0;
        while axis < 2 && u >= areas[axis] {
            u -= areas[axis];
            axis += 1;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut p = Vector3::new(
            rng.random_range(-half.x..half.x),
            rng.random_range(-half.y..half.y),
            rng.random_range(-half.z..half.z),
        );
        p[axis] = sign * half[axis];
        let mut n = Vector3::zeros();
        n[axis] = sign;
        pts.push(center + p);
        normals.push(n);
    }
    PointCloud::with_normals(pts, normals).unwrap()
}

/// A random box-shaped target half a meter in front of the default arm, a
/// random obstacle cluster beside it and one `use` region on the target.
pub fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let center = Vector3::new(0.5, 0.0, 0.3) + uniform_vec(rng, -0.05, 0.05);
    let half = uniform_vec(rng, 0.015, 0.05);
    let count = rng.random_range(150..400);
    let target = box_surface_points(rng, center, half, count);
    let obstacle_center = center + Vector3::new(0.0, half.y + rng.random_range(0.03..0.08), 0.0);
    let spread = uniform_vec(rng, 0.01, 0.04);
    let obstacles: Vec<Vector3<f64>> = (0..rng.random_range(30..150))
        .map(|_| {
            obstacle_center
                + Vector3::new(
                    rng.random_range(-spread.x..spread.x),
                    rng.random_range(-spread.y..spread.y),
                    rng.random_range(-spread.z..spread.z),
                )
        })
        .collect();
    let region_center = center + Vector3::new(rng.random_range(-half.x..half.x), -half.y, 0.0);
    let region = AffordanceRegion::new(
        OrientedBox::new(
            Pose::new(region_center, random_rotation(rng)),
            uniform_vec(rng, 0.005, 0.02),
        )
        .unwrap(),
        vec!["use".into()],
    )
    .unwrap();

    let mut scene = Scene::new(target);
    scene.obstacle_cloud = PointCloud::new(obstacles);
    scene.chain = Some(SerialChain::six_dof_arm(Pose::identity()));
    scene.affordance_regions = vec![region];
    scene.intent = Some("use".into());
    scene.hierarchy = RuleHierarchy::grasp_default();
    scene
}

/// A pose within `radius` of a random target point, with random orientation.
pub fn pose_near_target(rng: &mut ChaCha8Rng, scene: &Scene, radius: f64) -> Pose {
    let pts = scene.target_cloud.points();
    let anchor = pts[rng.random_range(0..pts.len())];
    let dir = Vector3::new(gauss(rng), gauss(rng), gauss(rng)).normalize();
    Pose::new(anchor + dir * rng.random_range(0.0..radius), random_rotation(rng))
}

/// Central differences along the pose tangent, computed independently of the
/// library's own helper.
pub fn central_differences(f: impl Fn(&Pose) -> f64, pose: &Pose, h: f64) -> Vector6<f64> {
    Vector6::from_fn(|k, _| {
        let mut e = Vector6::zeros();
        e[k] = h;
        (f(&pose.retract(&TangentVector(e))) - f(&pose.retract(&TangentVector(-e)))) / (2.0 * h)
    })
}

pub fn relative_error(analytic: &Vector6<f64>, numeric: &Vector6<f64>) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(numeric.norm()).max(GRADIENT_FLOOR)
}

pub fn gradient_error(evaluator: &dyn CriterionEvaluator, pose: &Pose, scene: &Scene) -> f64 {
    gradient_error_with_step(evaluator, pose, scene, FD_STEP)
}

pub fn gradient_error_with_step(evaluator: &dyn CriterionEvaluator, pose: &Pose, scene: &Scene, h: f64) -> f64 {
    let analytic = evaluator.gradient(pose, scene).unwrap();
    let numeric = central_differences(|p| evaluator.probability(p, scene).unwrap(), pose, h);
    relative_error(&analytic, &numeric)
}

/// True when some coordinate of a box-frame point lies within `margin` of a
/// face plane `|x_i| = h_i`. The box surface is where the exterior distance
/// has a gradient jump; the rest of those planes is where its curvature
/// jumps, which costs central differences their second-order accuracy.
pub fn near_box_seam(local: &Vector3<f64>, half: &Vector3<f64>, margin: f64) -> bool {
    (0..3).any(|i| (local[i].abs() - half[i]).abs() < margin)
}

/// Widest displacement a difference stencil of step `FD_STEP` gives a point
/// within 0.2 m of the gripper origin, with a safety factor.
pub const SEAM_MARGIN: f64 = 3.0 * FD_STEP;

/// Obstacle points near a seam of any gripper box.
pub fn collision_kink(pose: &Pose, scene: &Scene) -> bool {
    scene.obstacle_cloud.points().iter().any(|x| {
        let y = pose.inverse_transform_point(x);
        scene.gripper.boxes().iter().any(|b| {
            near_box_seam(&b.pose.inverse_transform_point(&y), &b.half_extent, SEAM_MARGIN)
        })
    })
}

/// Target points near a seam of the closing region.
pub fn stability_kink(pose: &Pose, scene: &Scene) -> bool {
    let region = scene.gripper.closing_region();
    scene.target_cloud.points().iter().any(|x| {
        let local = region.pose.inverse_transform_point(&pose.inverse_transform_point(x));
        near_box_seam(&local, &region.half_extent, SEAM_MARGIN)
    })
}

/// The grasp center near a seam of an affordance region, near a switch of
/// the nearest target point, or within stencil reach of a target point,
/// where the point distance has its cone apex.
pub fn intention_kink(pose: &Pose, scene: &Scene) -> bool {
    let t = pose.translation();
    let near_region = scene.affordance_regions.iter().any(|r| {
        near_box_seam(&r.region.pose.inverse_transform_point(t), &r.region.half_extent, SEAM_MARGIN)
    });
    let mut d: Vec<f64> = scene.target_cloud.points().iter().map(|p| (p - t).norm()).collect();
    d.sort_by(f64::total_cmp);
    near_region || d.first().is_some_and(|&d0| d0 < SEAM_MARGIN) || (d.len() > 1 && d[1] - d[0] < KINK_MARGIN)
}
