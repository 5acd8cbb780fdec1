//! Seeded synthetic benchmark scenes.
//!
//! All scenes use the default six-joint arm at the world origin, the default
//! gripper, and a target placed about half a meter in front of the arm.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::criteria::{AffordanceRegion, ClassifierParams};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, PointCloud, Pose, SerialChain};
use crate::hierarchy::RuleHierarchy;
use crate::scene::Scene;

pub const SYNTHETIC_SCENES: [&str; 5] = ["slot", "bowl-rim", "open", "intent-blocked", "intent-clear"];

/// Surface samples of an axis-aligned box with outward normals; edges and
/// corners are shared by the faces that meet there, so points are not unique
/// at the seams but every normal is exact for its face.
fn box_surface(center: Vector3<f64>, half: Vector3<f64>, spacing: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut pts = Vec::new();
    let mut normals = Vec::new();
    let steps = |h: f64| ((2.0 * h / spacing).round() as usize).max(1);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (nu, nv) = (steps(half[u]), steps(half[v]));
        for sign in [-1.0, 1.0] {
            let mut n = Vector3::zeros();
            n[axis] = sign;
            for i in 0..=nu {
                for j in 0..=nv {
                    let mut p = Vector3::zeros();
                    p[axis] = sign * half[axis];
                    p[u] = -half[u] + 2.0 * half[u] * i as f64 / nu as f64;
                    p[v] = -half[v] + 2.0 * half[v] * j as f64 / nv as f64;
                    pts.push(center + p);
                    normals.push(n);
                }
            }
        }
    }
    (pts, normals)
}

/// Side surface of a cylinder along `axis` (x, y or z) with outward radial normals.
fn cylinder_surface(
    center: Vector3<f64>,
    axis: usize,
    half_length: f64,
    radius: f64,
    spacing: f64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let rings = ((2.0 * half_length / spacing).round() as usize).max(1);
    let around = ((2.0 * std::f64::consts::PI * radius / spacing).round() as usize).max(6);
    let mut pts = Vec::new();
    let mut normals = Vec::new();
    for i in 0..=rings {
        let s = -half_length + 2.0 * half_length * i as f64 / rings as f64;
        for k in 0..around {
            let a = 2.0 * std::f64::consts::PI * k as f64 / around as f64;
            let mut n = Vector3::zeros();
            n[u] = a.cos();
            n[v] = a.sin();
            let mut p = n * radius;
            p[axis] = s;
            pts.push(center + p);
            normals.push(n);
        }
    }
    (pts, normals)
}

struct Builder {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, 3e-4).expect("valid deviation"),
        }
    }

    /// Uniform offset in `[-r, r]` on x and y.
    fn placement(&mut self, r: f64) -> Vector3<f64> {
        Vector3::new(self.rng.random_range(-r..=r), self.rng.random_range(-r..=r), 0.0)
    }

    fn jitter(&mut self, pts: Vec<Vector3<f64>>) -> Vec<Vector3<f64>> {
        pts.into_iter()
            .map(|p| p + Vector3::from_fn(|_, _| self.rng.sample(self.noise)))
            .collect()
    }

    fn target(&mut self, (pts, normals): (Vec<Vector3<f64>>, Vec<Vector3<f64>>)) -> PointCloud {
        let pts = self.jitter(pts);
        PointCloud::with_normals(pts, normals).expect("unit normals")
    }

    fn obstacles(&mut self, parts: Vec<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)>) -> PointCloud {
        let pts = parts.into_iter().flat_map(|(p, _)| p).collect();
        PointCloud::new(self.jitter(pts))
    }
}

fn region(center: Vector3<f64>, half: Vector3<f64>, intent: &str) -> AffordanceRegion {
    AffordanceRegion::new(
        OrientedBox::centered(center, half).expect("positive extents"),
        vec![intent.to_string()],
    )
    .expect("non-empty intents")
}

fn base_scene(name: &str, target: PointCloud) -> Scene {
    let mut scene = Scene::new(target);
    scene.name = Some(name.to_string());
    scene.chain = Some(SerialChain::six_dof_arm(Pose::identity()));
    scene.hierarchy = RuleHierarchy::grasp_default();
    scene.intent = Some("use".into());
    scene
}

/// Builds a named synthetic scene. The same `(name, seed)` always gives the
/// same scene.
///
/// * `slot`: a thin plate with two obstacle walls behind its far edge and a
///   narrow gap between them; the `use` region is on a side edge.
/// * `bowl-rim`: an upright stick inside a ring of obstacle points.
/// * `open`: a horizontal stick and no obstacles.
/// * `intent-blocked`: a long stick whose `use` end is boxed in by obstacles.
/// * `intent-clear`: the same stick without the obstacles.
pub fn make_synthetic_scene(name: &str, seed: u64) -> Result<Scene> {
    let mut b = Builder::new(seed);
    let scene = match name {
        "slot" => {
            let c = Vector3::new(0.5, 0.0, 0.3) + b.placement(0.005);
            let target = b.target(box_surface(c, Vector3::new(0.08, 0.08, 0.005), 0.005));
            let wall_half = Vector3::new(0.01, 0.03, 0.04);
            let obstacles = b.obstacles(vec![
                box_surface(c + Vector3::new(0.095, -0.045, 0.0), wall_half, 0.01),
                box_surface(c + Vector3::new(0.095, 0.045, 0.0), wall_half, 0.01),
            ]);
            let mut s = base_scene(name, target);
            s.obstacle_cloud = obstacles;
            s.affordance_regions = vec![
                region(c + Vector3::new(-0.02, -0.08, 0.0), Vector3::new(0.015, 0.01, 0.01), "use"),
                region(c + Vector3::new(0.08, 0.0, 0.0), Vector3::new(0.01, 0.02, 0.01), "handover"),
            ];
            s.params = ClassifierParams { d_th: 0.065, ..ClassifierParams::default() };
            s
        }
        "bowl-rim" => {
            let c = Vector3::new(0.5, 0.0, 0.25) + b.placement(0.005);
            let target = b.target(cylinder_surface(c, 2, 0.06, 0.01, 0.004));
            let ring: Vec<Vector3<f64>> = (0..72)
                .flat_map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / 72.0;
                    (0..5).map(move |h| c + Vector3::new(0.09 * a.cos(), 0.09 * a.sin(), -0.06 + 0.01 * h as f64))
                })
                .collect();
            let obstacles = b.obstacles(vec![(ring, Vec::new())]);
            let mut s = base_scene(name, target);
            s.obstacle_cloud = obstacles;
            s.affordance_regions = vec![region(c + Vector3::new(0.0, 0.0, 0.045), Vector3::new(0.015, 0.015, 0.015), "use")];
            s.params = ClassifierParams { d_th: 0.06, ..ClassifierParams::default() };
            s
        }
        "open" => {
            let c = Vector3::new(0.5, 0.0, 0.3) + b.placement(0.005);
            let target = b.target(cylinder_surface(c, 1, 0.08, 0.012, 0.004));
            let mut s = base_scene(name, target);
            s.affordance_regions = vec![
                region(c, Vector3::new(0.015, 0.08, 0.015), "use"),
                region(c + Vector3::new(0.0, -0.06, 0.0), Vector3::new(0.015, 0.02, 0.015), "handover"),
            ];
            s.params = ClassifierParams { omega_th: 0.02, ..ClassifierParams::default() };
            s
        }
        "intent-blocked" | "intent-clear" => {
            let c = Vector3::new(0.5, 0.0, 0.3) + b.placement(0.005);
            let target = b.target(cylinder_surface(c, 1, 0.15, 0.012, 0.004));
            let end = c + Vector3::new(0.0, 0.13, 0.0);
            let mut s = base_scene(name, target);
            if name == "intent-blocked" {
                s.obstacle_cloud = b.obstacles(vec![box_surface(end, Vector3::new(0.03, 0.03, 0.03), 0.006)]);
            }
            s.affordance_regions = vec![region(end, Vector3::new(0.015, 0.02, 0.015), "use")];
            s.params = ClassifierParams { d_th: 0.065, rho_th: 0.02, ..ClassifierParams::default() };
            s
        }
        other => {
            return Err(Error::domain(format!(
                "unknown synthetic scene `{other}` (known: {})",
                SYNTHETIC_SCENES.join(", ")
            )))
        }
    };
    Ok(scene)
}
