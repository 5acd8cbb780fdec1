//! Scene documents: clouds, gripper, robot chain, affordances, intent,
//! classifier parameters and the rule hierarchy.
//!
//! A scene file is JSON with `"schema": "grace-scene/1"`. Clouds are either
//! inline (`{"points": [[x, y, z], ...], "normals": [...]}`) or a path to an
//! ASCII PLY / XYZ file resolved relative to the scene file.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::criteria::{AffordanceRegion, ClassifierParams, EvaluatorRegistry};
use crate::error::{Error, Result};
use crate::geometry::{GripperModel, NormalOrientation, PointCloud, Pose, SerialChain};
use crate::hierarchy::RuleHierarchy;

pub const SCENE_SCHEMA: &str = "grace-scene/1";

/// Everything the criteria observe about the world. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: Option<String>,
    /// Object to grasp; normals required by the stability criterion.
    pub target_cloud: PointCloud,
    /// Everything else; the target is not included.
    pub obstacle_cloud: PointCloud,
    pub gripper: GripperModel,
    pub chain: Option<SerialChain>,
    pub affordance_regions: Vec<AffordanceRegion>,
    pub intent: Option<String>,
    pub params: ClassifierParams,
    pub hierarchy: RuleHierarchy,
}

impl Scene {
    /// Scene with defaults for everything but the target cloud: default
    /// gripper and hierarchy, the six-joint arm at the origin, no obstacles.
    pub fn new(target_cloud: PointCloud) -> Self {
        Self {
            name: None,
            target_cloud,
            obstacle_cloud: PointCloud::default(),
            gripper: GripperModel::default(),
            chain: Some(SerialChain::six_dof_arm(Pose::identity())),
            affordance_regions: Vec::new(),
            intent: None,
            params: ClassifierParams::default(),
            hierarchy: RuleHierarchy::grasp_default(),
        }
    }

    /// Checks the scene against the registry: non-empty target, known
    /// criteria, valid parameters, and whatever each referenced evaluator needs.
    pub fn validate(&self, registry: &EvaluatorRegistry) -> Result<()> {
        if self.target_cloud.is_empty() {
            return Err(Error::validation("target_cloud", "target cloud is empty"));
        }
        self.params.validate()?;
        for (i, rule) in self.hierarchy.rules().iter().enumerate() {
            for (j, id) in rule.criteria.iter().enumerate() {
                let evaluator = registry.get(id).map_err(|_| {
                    Error::validation(format!("hierarchy[{i}][{j}]"), format!("unknown criterion `{id}`"))
                })?;
                evaluator.check_scene(self).map_err(|e| {
                    Error::validation(
                        format!("hierarchy[{i}][{j}]"),
                        format!("criterion `{id}` cannot be evaluated: {e}"),
                    )
                })?;
            }
        }
        Ok(())
    }

    pub fn with_hierarchy(&self, hierarchy: RuleHierarchy) -> Scene {
        Scene {
            hierarchy,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CloudSource {
    Path(PathBuf),
    Inline {
        points: Vec<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        normals: Option<Vec<[f64; 3]>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalEstimation {
    k: usize,
    /// Orient normals toward this point; outward from the centroid if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    viewpoint: Option<[f64; 3]>,
}

impl Default for NormalEstimation {
    fn default() -> Self {
        Self { k: 16, viewpoint: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    target_cloud: CloudSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obstacle_cloud: Option<CloudSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normal_estimation: Option<NormalEstimation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gripper: Option<GripperModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chain: Option<SerialChain>,
    #[serde(default)]
    affordance_regions: Vec<AffordanceRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent: Option<String>,
    #[serde(default)]
    params: ClassifierParams,
    #[serde(default = "RuleHierarchy::grasp_default")]
    hierarchy: RuleHierarchy,
}

fn load_cloud(src: &CloudSource, base: &Path, field: &str) -> Result<PointCloud> {
    match src {
        CloudSource::Path(p) => PointCloud::load(&base.join(p)),
        CloudSource::Inline { points, normals } => {
            let pts = points.iter().map(|p| Vector3::from(*p)).collect();
            match normals {
                None => Ok(PointCloud::new(pts)),
                Some(ns) => {
                    let ns = ns.iter().map(|n| Vector3::from(*n)).map(|n| n / n.norm()).collect();
                    PointCloud::with_normals(pts, ns).map_err(|e| Error::validation(field, e.to_string()))
                }
            }
        }
    }
}

/// Reads and validates a scene document against the built-in registry.
pub fn load_scene(path: &Path) -> Result<Scene> {
    load_scene_with(path, &EvaluatorRegistry::builtin())
}

pub fn load_scene_with(path: &Path, registry: &EvaluatorRegistry) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SceneDoc = serde_json::from_str(&text).map_err(|e| {
        Error::validation(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
    })?;
    if doc.schema != SCENE_SCHEMA {
        return Err(Error::validation(
            "schema",
            format!("expected `{SCENE_SCHEMA}`, found `{}`", doc.schema),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut target = load_cloud(&doc.target_cloud, base, "target_cloud")?;
    if target.is_empty() {
        return Err(Error::validation("target_cloud", "target cloud is empty"));
    }
    if target.normals().is_none() {
        let est = doc.normal_estimation.clone().unwrap_or_default();
        let orientation = match est.viewpoint {
            Some(v) => NormalOrientation::Viewpoint(Vector3::from(v)),
            None => NormalOrientation::Outward,
        };
        target = target
            .estimate_normals(est.k, orientation)
            .map_err(|e| Error::validation("normal_estimation", e.to_string()))?;
    }
    let obstacles = match &doc.obstacle_cloud {
        Some(src) => load_cloud(src, base, "obstacle_cloud")?,
        None => PointCloud::default(),
    };
    for (i, r) in doc.affordance_regions.iter().enumerate() {
        if r.intents.is_empty() {
            return Err(Error::validation(format!("affordance_regions[{i}].intents"), "must not be empty"));
        }
        if r.region.half_extent.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::validation(format!("affordance_regions[{i}].box"), "half extents must be positive"));
        }
    }
    let scene = Scene {
        name: doc.name,
        target_cloud: target,
        obstacle_cloud: obstacles,
        gripper: doc.gripper.unwrap_or_default(),
        chain: Some(doc.chain.unwrap_or_else(|| SerialChain::six_dof_arm(Pose::identity()))),
        affordance_regions: doc.affordance_regions,
        intent: doc.intent,
        params: doc.params,
        hierarchy: doc.hierarchy,
    };
    scene.validate(registry)?;
    Ok(scene)
}

/// Writes `path` plus the clouds as ASCII PLY files beside it
/// (`<stem>.target.ply`, `<stem>.obstacles.ply`).
pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    let dir = path.parent().unwrap_or(Path::new("."));
    let target_name = format!("{stem}.target.ply");
    scene.target_cloud.save_ply(&dir.join(&target_name))?;
    let obstacle_cloud = if scene.obstacle_cloud.is_empty() {
        None
    } else {
        let name = format!("{stem}.obstacles.ply");
        scene.obstacle_cloud.save_ply(&dir.join(&name))?;
        Some(CloudSource::Path(name.into()))
    };
    let doc = SceneDoc {
        schema: SCENE_SCHEMA.to_string(),
        name: scene.name.clone(),
        target_cloud: CloudSource::Path(target_name.into()),
        obstacle_cloud,
        normal_estimation: None,
        gripper: Some(scene.gripper.clone()),
        chain: scene.chain.clone(),
        affordance_regions: scene.affordance_regions.clone(),
        intent: scene.intent.clone(),
        params: scene.params,
        hierarchy: scene.hierarchy.clone(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("scene document serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
