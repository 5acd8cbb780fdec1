//! Result records for optimizer and baseline runs: a JSON document plus a
//! flat CSV twin with one row per grasp.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hierarchy::{rank_distribution, RuleHierarchy, RuleProbabilities};
use crate::optimizer::{Grasp, OptimizationRun, Origin};

pub const RESULTS_SCHEMA: &str = "grace-results/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGrasp {
    pub pose: Pose,
    pub utility: f64,
    pub lower_bound: f64,
    pub criteria: BTreeMap<String, f64>,
    /// Rule satisfaction probabilities, priority 1 first.
    pub rules: Vec<f64>,
    /// `P(rank = k)` at index `k - 1`.
    pub rank_distribution: Vec<f64>,
    pub iteration: usize,
    pub origin: Origin,
}

impl RankedGrasp {
    pub fn from_grasp(g: &Grasp) -> Result<Self> {
        let probs = RuleProbabilities::from_rules(g.score.rules.clone())?;
        Ok(Self {
            pose: g.pose,
            utility: g.score.utility,
            lower_bound: g.score.lower_bound,
            criteria: g.score.criteria.clone(),
            rules: g.score.rules.clone(),
            rank_distribution: rank_distribution(&probs)?,
            iteration: g.iteration,
            origin: g.origin,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub schema: String,
    pub method: String,
    pub scene: Option<String>,
    pub hierarchy: RuleHierarchy,
    pub seed: u64,
    /// Echo of the settings the run used.
    pub config: serde_json::Value,
    /// Criterion evaluations spent by the run.
    pub candidates: usize,
    /// Sorted by utility, best first.
    pub grasps: Vec<RankedGrasp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl ResultRecord {
    pub fn from_run(
        method: impl Into<String>,
        scene: Option<String>,
        hierarchy: &RuleHierarchy,
        seed: u64,
        config: serde_json::Value,
        run: &OptimizationRun,
    ) -> Result<Self> {
        let record = Self {
            schema: RESULTS_SCHEMA.to_string(),
            method: method.into(),
            scene,
            hierarchy: hierarchy.clone(),
            seed,
            config,
            candidates: run.candidates,
            grasps: run.batch.grasps.iter().map(RankedGrasp::from_grasp).collect::<Result<_>>()?,
            timings: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != RESULTS_SCHEMA {
            return Err(Error::validation(
                "schema",
                format!("expected `{RESULTS_SCHEMA}`, found `{}`", self.schema),
            ));
        }
        let n = self.hierarchy.len();
        for (i, g) in self.grasps.iter().enumerate() {
            if g.rules.len() != n {
                return Err(Error::validation(
                    format!("grasps[{i}].rules"),
                    format!("expected {n} rule probabilities, found {}", g.rules.len()),
                ));
            }
        }
        if let Some(i) = self.grasps.windows(2).position(|w| w[0].utility < w[1].utility) {
            return Err(Error::validation(
                format!("grasps[{}]", i + 1),
                "grasps must be sorted by utility, best first",
            ));
        }
        Ok(())
    }

    /// Criterion identifiers in CSV column order.
    fn criterion_columns(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.hierarchy.criteria().into_iter().map(str::to_string).collect();
        ids.sort();
        ids
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.hierarchy.len();
        let criteria = self.criterion_columns();
        let mut header: Vec<String> = ["index", "tx", "ty", "tz", "qw", "qx", "qy", "qz", "utility", "lower_bound"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(criteria.iter().map(|c| format!("p_{c}")));
        header.extend((1..=n).map(|i| format!("rule_{i}")));
        header.extend((1..=1usize << n).map(|k| format!("rank_{k}")));
        header.extend(["iteration".to_string(), "origin".to_string()]);

        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::domain(format!("csv output failed: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for (i, g) in self.grasps.iter().enumerate() {
            let t = g.pose.translation();
            let q = g.pose.rotation().quaternion();
            let mut row: Vec<String> = vec![i.to_string()];
            row.extend([t.x, t.y, t.z, q.w, q.i, q.j, q.k, g.utility, g.lower_bound].iter().map(f64::to_string));
            row.extend(criteria.iter().map(|c| g.criteria.get(c).map_or(String::new(), f64::to_string)));
            row.extend(g.rules.iter().map(f64::to_string));
            row.extend(g.rank_distribution.iter().map(f64::to_string));
            row.push(g.iteration.to_string());
            row.push(match g.origin {
                Origin::Sampled => "sampled".into(),
                Origin::Perturbed => "perturbed".into(),
            });
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::domain(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

/// Path of the CSV twin written next to `path`.
pub fn csv_twin(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Writes `record` as pretty JSON to `path` and as CSV to [`csv_twin`].
pub fn save_results(record: &ResultRecord, path: &Path) -> Result<()> {
    record.validate()?;
    let json = serde_json::to_string_pretty(record).expect("result records serialize");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let twin = csv_twin(path);
    let mut buf = Vec::new();
    record.write_csv(&mut buf)?;
    fs::write(&twin, buf).map_err(|e| Error::io(&twin, e))
}

pub fn load_results(path: &Path) -> Result<ResultRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: ResultRecord = serde_json::from_str(&text).map_err(|e| {
        Error::validation(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
    })?;
    record.validate()?;
    Ok(record)
}
