//! Benchmark harness: the optimizer against sample-and-filter baselines of
//! several sizes, plus an ablation ladder over rule hierarchies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{collision_free_probability, EvaluatorRegistry};
use crate::error::{Error, Result};
use crate::hierarchy::{RuleHierarchy, COLLISION, EXECUTION, INTENTION, STABILITY};
use crate::optimizer::{filter_baseline, grace_opt, GraspBatch, Objective, OptimizationRun, OptimizerConfig, SamplerSpec};
use crate::scene::{load_scene, Scene};
use crate::synthetic::make_synthetic_scene;

pub const REPORT_SCHEMA: &str = "grace-bench/1";

/// Number of top grasps the benchmark metrics average over.
pub const TOP_K: usize = 10;

/// Where each seed's scene comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BenchScene {
    /// Regenerated for every seed.
    Synthetic { name: String },
    /// The same scene for every seed.
    File { path: PathBuf },
}

impl BenchScene {
    pub fn label(&self) -> String {
        match self {
            BenchScene::Synthetic { name } => name.clone(),
            BenchScene::File { path } => path.display().to_string(),
        }
    }
}

/// The five-rung ablation ladder: S, SE, SC, SEC, SECN.
pub fn ablation_hierarchies() -> Vec<RuleHierarchy> {
    let h = |rules: Vec<Vec<&str>>| RuleHierarchy::new(rules).expect("ablation hierarchies are valid");
    vec![
        h(vec![vec![STABILITY]]),
        h(vec![vec![STABILITY], vec![EXECUTION]]),
        h(vec![vec![STABILITY], vec![COLLISION]]),
        h(vec![vec![STABILITY], vec![EXECUTION, COLLISION]]),
        h(vec![vec![STABILITY], vec![EXECUTION, COLLISION], vec![INTENTION]]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scene: BenchScene,
    pub seeds: Vec<u64>,
    /// Optimizer settings; the seed field is replaced by each run's seed.
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerSpec,
    pub filter_sizes: Vec<usize>,
    pub ablation: bool,
    pub paper_literal_collision_sign: bool,
    pub timings: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scene: BenchScene::Synthetic { name: "slot".into() },
            seeds: (0..5).collect(),
            optimizer: OptimizerConfig::default(),
            sampler: SamplerSpec::default(),
            filter_sizes: vec![10, 50, 100, 1000],
            ablation: true,
            paper_literal_collision_sign: false,
            timings: false,
        }
    }
}

/// One method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub method: String,
    pub hierarchy: String,
    pub seed: u64,
    pub top10_mean_utility: f64,
    pub top1_utility: f64,
    pub top1_rules: Vec<f64>,
    pub top1_criteria: BTreeMap<String, f64>,
    /// Fraction of the top grasps whose collision-free probability exceeds 0.5.
    pub top10_collision_free: f64,
    pub candidates: usize,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub hierarchy: String,
    pub runs: usize,
    pub top10_mean: f64,
    pub top10_std: f64,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub collision_free_mean: f64,
    pub collision_free_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkReport {
    pub schema: String,
    pub scene: String,
    pub seeds: Vec<u64>,
    pub config: BenchConfig,
    /// Sorted by `(method, seed)`.
    pub runs: Vec<BenchRun>,
    pub summary: Vec<SummaryRow>,
}

/// Sample mean and standard deviation (`n - 1` denominator; zero for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
enum Method {
    Grace { name: String, hierarchy: Option<RuleHierarchy> },
    Filter { n: usize },
}

impl Method {
    fn name(&self) -> String {
        match self {
            Method::Grace { name, .. } => name.clone(),
            Method::Filter { n } => format!("filter-{n}"),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::domain("a benchmark needs at least one seed"));
        }
        if self.filter_sizes.contains(&0) {
            return Err(Error::domain("filter sample counts must be at least 1"));
        }
        self.optimizer.validate()
    }

    fn methods(&self) -> Vec<Method> {
        let mut methods = vec![Method::Grace {
            name: "grace".into(),
            hierarchy: None,
        }];
        methods.extend(self.filter_sizes.iter().map(|&n| Method::Filter { n }));
        if self.ablation {
            methods.extend(ablation_hierarchies().into_iter().map(|h| Method::Grace {
                name: format!("grace-{}", h.label().replace('|', "")),
                hierarchy: Some(h),
            }));
        }
        methods
    }

    fn scene_for(&self, seed: u64) -> Result<Scene> {
        let mut scene = match &self.scene {
            BenchScene::Synthetic { name } => make_synthetic_scene(name, seed)?,
            BenchScene::File { path } => load_scene(path)?,
        };
        scene.params.paper_literal_collision_sign = self.paper_literal_collision_sign;
        Ok(scene)
    }
}

fn metrics(
    method: String,
    hierarchy: &RuleHierarchy,
    seed: u64,
    scene: &Scene,
    run: &OptimizationRun,
    wall_seconds: Option<f64>,
) -> Result<BenchRun> {
    let batch: &GraspBatch = &run.batch;
    let best = batch
        .best()
        .ok_or_else(|| Error::domain(format!("{method} returned no grasps")))?;
    let top = &batch.grasps[..batch.len().min(TOP_K)];
    let mut free = 0usize;
    for g in top {
        if collision_free_probability(&g.pose, scene)? > 0.5 {
            free += 1;
        }
    }
    Ok(BenchRun {
        method,
        hierarchy: hierarchy.label(),
        seed,
        top10_mean_utility: batch.top_mean_utility(TOP_K).expect("non-empty batch"),
        top1_utility: best.score.utility,
        top1_rules: best.score.rules.clone(),
        top1_criteria: best.score.criteria.clone(),
        top10_collision_free: free as f64 / top.len() as f64,
        candidates: run.candidates,
        wall_seconds,
    })
}

fn run_one(config: &BenchConfig, method: &Method, seed: u64, registry: &EvaluatorRegistry) -> Result<BenchRun> {
    let scene = config.scene_for(seed)?;
    let hierarchy = match method {
        Method::Grace { hierarchy: Some(h), .. } => h.clone(),
        _ => scene.hierarchy.clone(),
    };
    let objective = Objective::new(&scene, &hierarchy, registry)?;
    let start = Instant::now();
    let run = match method {
        Method::Grace { .. } => grace_opt(
            &objective,
            &OptimizerConfig {
                seed,
                ..config.optimizer
            },
            &config.sampler,
        )?,
        Method::Filter { n } => filter_baseline(&objective, &config.sampler, *n, config.optimizer.select.min(*n), seed)?,
    };
    let wall = config.timings.then(|| start.elapsed().as_secs_f64());
    metrics(method.name(), &hierarchy, seed, &scene, &run, wall)
}

fn summarize(runs: &[BenchRun]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(&str, &str), Vec<&BenchRun>> = BTreeMap::new();
    for r in runs {
        groups.entry((&r.method, &r.hierarchy)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, hierarchy), rs)| {
            let col = |f: fn(&BenchRun) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (top10_mean, top10_std) = col(|r| r.top10_mean_utility);
            let (top1_mean, top1_std) = col(|r| r.top1_utility);
            let (collision_free_mean, collision_free_std) = col(|r| r.top10_collision_free);
            SummaryRow {
                method: method.to_string(),
                hierarchy: hierarchy.to_string(),
                runs: rs.len(),
                top10_mean,
                top10_std,
                top1_mean,
                top1_std,
                collision_free_mean,
                collision_free_std,
            }
        })
        .collect()
}

/// Runs every method on every seed. Runs execute in parallel; the row order
/// depends only on `(method, seed)`.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let registry = EvaluatorRegistry::builtin();
    let jobs: Vec<(Method, u64)> = config
        .methods()
        .into_iter()
        .flat_map(|m| config.seeds.iter().map(move |&s| (m.clone(), s)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|(m, s)| run_one(config, m, *s, &registry))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));
    let summary = summarize(&runs);
    Ok(BenchmarkReport {
        schema: REPORT_SCHEMA.into(),
        scene: config.scene.label(),
        seeds: config.seeds.clone(),
        config: config.clone(),
        runs,
        summary,
    })
}

impl BenchmarkReport {
    pub fn validate(&self) -> Result<()> {
        if self.schema != REPORT_SCHEMA {
            return Err(Error::validation(
                "schema",
                format!("expected `{REPORT_SCHEMA}`, found `{}`", self.schema),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "at least one seed is required"));
        }
        if self.runs.is_empty() {
            return Err(Error::validation("runs", "at least one method is required"));
        }
        Ok(())
    }

    pub fn summary_for(&self, method: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn runs_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a BenchRun> + 'a {
        self.runs.iter().filter(move |r| r.method == method)
    }

    /// Writes `report.json`, `report.csv`, `long.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("reports serialize");
        write_file(&dir.join("report.json"), (json + "\n").into_bytes())?;
        write_file(&dir.join("report.csv"), self.wide_csv()?)?;
        write_file(&dir.join("long.csv"), self.long_csv()?)?;
        write_file(&dir.join("summary.csv"), self.summary_csv()?)
    }

    fn rule_count(&self) -> usize {
        self.runs.iter().map(|r| r.top1_rules.len()).max().unwrap_or(0)
    }

    fn wide_csv(&self) -> Result<Vec<u8>> {
        let n = self.rule_count();
        let mut header: Vec<String> = [
            "method",
            "hierarchy",
            "seed",
            "top10_mean_utility",
            "top1_utility",
            "top10_collision_free",
            "candidates",
            "wall_seconds",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=n).map(|i| format!("top1_rule_{i}")));
        let rows = self.runs.iter().map(|r| {
            let mut row = vec![
                r.method.clone(),
                r.hierarchy.clone(),
                r.seed.to_string(),
                r.top10_mean_utility.to_string(),
                r.top1_utility.to_string(),
                r.top10_collision_free.to_string(),
                r.candidates.to_string(),
                r.wall_seconds.map_or(String::new(), |w| w.to_string()),
            ];
            row.extend((0..n).map(|i| r.top1_rules.get(i).map_or(String::new(), f64::to_string)));
            row
        });
        to_csv(header, rows)
    }

    /// One `(method, hierarchy, seed, metric, value)` row per number; plot-ready.
    fn long_csv(&self) -> Result<Vec<u8>> {
        let header = ["method", "hierarchy", "seed", "metric", "value"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for r in &self.runs {
            let mut push = |metric: String, value: f64| {
                rows.push(vec![r.method.clone(), r.hierarchy.clone(), r.seed.to_string(), metric, value.to_string()]);
            };
            push("top10_mean_utility".into(), r.top10_mean_utility);
            push("top1_utility".into(), r.top1_utility);
            push("top10_collision_free".into(), r.top10_collision_free);
            push("candidates".into(), r.candidates as f64);
            for (i, q) in r.top1_rules.iter().enumerate() {
                push(format!("top1_rule_{}", i + 1), *q);
            }
            for (c, p) in &r.top1_criteria {
                push(format!("top1_{c}"), *p);
            }
            if let Some(w) = r.wall_seconds {
                push("wall_seconds".into(), w);
            }
        }
        to_csv(header, rows)
    }

    fn summary_csv(&self) -> Result<Vec<u8>> {
        let header = [
            "method",
            "hierarchy",
            "runs",
            "top10_mean",
            "top10_std",
            "top1_mean",
            "top1_std",
            "collision_free_mean",
            "collision_free_std",
        ]
        .map(String::from)
        .to_vec();
        let rows = self.summary.iter().map(|s| {
            vec![
                s.method.clone(),
                s.hierarchy.clone(),
                s.runs.to_string(),
                s.top10_mean.to_string(),
                s.top10_std.to_string(),
                s.top1_mean.to_string(),
                s.top1_std.to_string(),
                s.collision_free_mean.to_string(),
                s.collision_free_std.to_string(),
            ]
        });
        to_csv(header, rows)
    }
}

fn to_csv(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let csv_err = |e: csv::Error| Error::domain(format!("csv output failed: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::domain(format!("csv output failed: {e}")))
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads `report.json` from a directory written by [`BenchmarkReport::write`].
pub fn load_report(dir: &Path) -> Result<BenchmarkReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: BenchmarkReport = serde_json::from_str(&text).map_err(|e| {
        Error::validation(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
    })?;
    report.validate()?;
    Ok(report)
}
