//! Command-line front end. Exit codes: 0 success, 1 domain or validation
//! error, 2 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_benchmark, BenchConfig, BenchScene};
use crate::error::{Error, Result};
use crate::hierarchy::{rank, utility, SatisfactionPattern, MAX_RULES};
use crate::optimizer::{filter_baseline, grace_opt, write_stats_csv, Objective, OptimizerConfig, SamplerSpec};
use crate::results::{save_results, ResultRecord, Timings};
use crate::scene::{load_scene, save_scene, Scene};
use crate::synthetic::make_synthetic_scene;

/// Directory searched for `optimizer.json` when `--config` is not given.
pub const CONFIG_DIR_ENV: &str = "RULEGRASP_CONFIG_DIR";

/// Largest hierarchy `rank-table` will print.
pub const MAX_TABLE_RULES: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "rulegrasp", version, about = "Grasp optimization over prioritized rule hierarchies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the evolution-strategy optimizer on a scene.
    Optimize(OptimizeArgs),
    /// Sample, score once and keep the best grasps.
    Filter(FilterArgs),
    /// Compare the optimizer against filter baselines over several seeds.
    Bench(BenchArgs),
    /// Print every satisfaction pattern with its rank and utility.
    RankTable(RankTableArgs),
    /// Scene utilities.
    #[command(subcommand)]
    Scene(SceneCommand),
}

#[derive(Debug, Subcommand)]
enum SceneCommand {
    /// Write a synthetic benchmark scene.
    Gen(SceneGenArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Scene document.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result document; a CSV twin is written next to it.
    #[arg(long, default_value = "results.json")]
    out: PathBuf,
    /// Score collision as sigma(C_c (d_th - d)) instead of sigma(C_c (d - d_th)).
    #[arg(long)]
    paper_literal_collision_sign: bool,
    /// Record wall-clock time in the output.
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    /// Optimizer settings as JSON; defaults to `$RULEGRASP_CONFIG_DIR/optimizer.json` if present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Outer iterations T.
    #[arg(long)]
    outer: Option<usize>,
    /// Inner gradient steps K.
    #[arg(long)]
    inner: Option<usize>,
    /// Inner step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Selection size Q.
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 50)]
    top: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Scene document used for every seed.
    #[arg(long, conflicts_with = "synthetic")]
    scene: Option<PathBuf>,
    /// Synthetic scene regenerated for every seed.
    #[arg(long)]
    synthetic: Option<String>,
    /// Number of seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    top: Option<usize>,
    /// Filter sample counts.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,1000")]
    filter_sizes: Vec<usize>,
    /// Skip the hierarchy ablation runs.
    #[arg(long)]
    no_ablation: bool,
    /// Output directory.
    #[arg(long, default_value = "bench")]
    out: PathBuf,
    #[arg(long)]
    paper_literal_collision_sign: bool,
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct RankTableArgs {
    /// Number of rules N.
    #[arg(long, required_unless_present = "scene")]
    rules: Option<usize>,
    /// Take the hierarchy from a scene document instead.
    #[arg(long, conflicts_with = "rules")]
    scene: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SceneGenArgs {
    /// One of: slot, bowl-rim, open, intent-blocked, intent-clear.
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene document; clouds are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Optimize(a) => cmd_optimize(a, out),
        Command::Filter(a) => cmd_filter(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::RankTable(a) => cmd_rank_table(a, out),
        Command::Scene(SceneCommand::Gen(a)) => cmd_scene_gen(a, out),
    }
}

fn say(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn read_config(path: &Path) -> Result<OptimizerConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::validation(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
    })
}

/// The explicit file, else `optimizer.json` in the configuration directory,
/// else the built-in defaults.
fn base_config(explicit: Option<&Path>) -> Result<OptimizerConfig> {
    if let Some(p) = explicit {
        return read_config(p);
    }
    if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
        let p = Path::new(&dir).join("optimizer.json");
        if p.exists() {
            return read_config(&p);
        }
    }
    Ok(OptimizerConfig::default())
}

struct Overrides {
    samples: Option<usize>,
    outer: Option<usize>,
    inner: Option<usize>,
    eta: Option<f64>,
    top: Option<usize>,
}

impl Overrides {
    fn apply(&self, mut c: OptimizerConfig) -> OptimizerConfig {
        if let Some(v) = self.samples {
            c.batch = v;
        }
        if let Some(v) = self.outer {
            c.outer_iterations = v;
        }
        if let Some(v) = self.inner {
            c.inner_steps = v;
        }
        if let Some(v) = self.eta {
            c.step_size = v;
        }
        if let Some(v) = self.top {
            c.select = v;
        }
        c
    }
}

fn open_scene(common: &Common) -> Result<Scene> {
    let mut scene = load_scene(&common.scene)?;
    scene.params.paper_literal_collision_sign = common.paper_literal_collision_sign;
    Ok(scene)
}

fn stats_path(out: &Path) -> PathBuf {
    out.with_extension("stats.csv")
}

fn cmd_optimize(a: OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let overrides = Overrides {
        samples: a.samples,
        outer: a.outer,
        inner: a.inner,
        eta: a.eta,
        top: a.top,
    };
    let config = OptimizerConfig {
        seed: a.common.seed,
        ..overrides.apply(base_config(a.config.as_deref())?)
    };
    config.validate()?;
    let scene = open_scene(&a.common)?;
    let objective = Objective::for_scene(&scene)?;
    let sampler = SamplerSpec::default();
    let start = Instant::now();
    let run = grace_opt(&objective, &config, &sampler)?;
    let elapsed = start.elapsed().as_secs_f64();

    let echo = serde_json::json!({
        "optimizer": config,
        "sampler": sampler,
        "paper_literal_collision_sign": a.common.paper_literal_collision_sign,
    });
    let mut record = ResultRecord::from_run("grace", scene.name.clone(), &scene.hierarchy, a.common.seed, echo, &run)?;
    if a.common.timings {
        record.timings = Some(Timings { wall_seconds: elapsed });
    }
    save_results(&record, &a.common.out)?;
    let stats = stats_path(&a.common.out);
    let mut buf = Vec::new();
    write_stats_csv(&run.stats, &mut buf).map_err(|e| Error::domain(format!("csv output failed: {e}")))?;
    fs::write(&stats, buf).map_err(|e| Error::io(&stats, e))?;
    report(out, &record, &a.common.out)
}

fn cmd_filter(a: FilterArgs, out: &mut dyn Write) -> Result<()> {
    let scene = open_scene(&a.common)?;
    let objective = Objective::for_scene(&scene)?;
    let sampler = SamplerSpec::default();
    let start = Instant::now();
    let run = filter_baseline(&objective, &sampler, a.samples, a.top, a.common.seed)?;
    let elapsed = start.elapsed().as_secs_f64();
    let echo = serde_json::json!({
        "samples": a.samples,
        "top": a.top,
        "sampler": sampler,
        "paper_literal_collision_sign": a.common.paper_literal_collision_sign,
    });
    let mut record = ResultRecord::from_run(
        format!("filter-{}", a.samples),
        scene.name.clone(),
        &scene.hierarchy,
        a.common.seed,
        echo,
        &run,
    )?;
    if a.common.timings {
        record.timings = Some(Timings { wall_seconds: elapsed });
    }
    save_results(&record, &a.common.out)?;
    report(out, &record, &a.common.out)
}

fn report(out: &mut dyn Write, record: &ResultRecord, path: &Path) -> Result<()> {
    let best = record.grasps.first().map_or(f64::NAN, |g| g.utility);
    say(
        out,
        format!(
            "{}: {} grasps, best utility {best:.6}, {} candidates -> {}",
            record.method,
            record.grasps.len(),
            record.candidates,
            path.display()
        ),
    )
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let scene = match (a.scene, a.synthetic) {
        (Some(path), None) => BenchScene::File { path },
        (None, Some(name)) => BenchScene::Synthetic { name },
        (None, None) => BenchScene::Synthetic { name: "slot".into() },
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    let overrides = Overrides {
        samples: a.samples,
        outer: a.outer,
        inner: a.inner,
        eta: a.eta,
        top: a.top,
    };
    let config = BenchConfig {
        scene,
        seeds: (a.seed..a.seed.saturating_add(a.seeds)).collect(),
        optimizer: overrides.apply(base_config(a.config.as_deref())?),
        sampler: SamplerSpec::default(),
        filter_sizes: a.filter_sizes,
        ablation: !a.no_ablation,
        paper_literal_collision_sign: a.paper_literal_collision_sign,
        timings: a.timings,
    };
    let report = run_benchmark(&config)?;
    report.write(&a.out)?;
    for s in &report.summary {
        say(
            out,
            format!(
                "{:<14} {:<8} top10 {:>9.4} +- {:.4}  top1 {:>9.4}  collision-free {:.2}",
                s.method, s.hierarchy, s.top10_mean, s.top10_std, s.top1_mean, s.collision_free_mean
            ),
        )?;
    }
    say(out, format!("report written to {}", a.out.display()))
}

/// Rows `(pattern, rank, utility, probability)` ordered by rank. The pattern
/// lists rule 1 first; the probability is the product of `q_i` or `(1-q_i)`.
pub fn rank_table(labels: &[String]) -> Result<Vec<(String, u64, u64, String)>> {
    let n = labels.len();
    if n == 0 || n > MAX_TABLE_RULES.min(MAX_RULES) {
        return Err(Error::Size(format!(
            "rank table needs between 1 and {MAX_TABLE_RULES} rules, got {n}"
        )));
    }
    let total = 1u64 << n;
    (1..=total)
        .map(|r| {
            let pattern = SatisfactionPattern::from_mask(n, total - r);
            let bits: String = pattern.bits().iter().map(|&b| if b { '1' } else { '0' }).collect();
            let prob = pattern
                .bits()
                .iter()
                .zip(labels)
                .map(|(&b, l)| if b { l.clone() } else { format!("(1-{l})") })
                .collect::<Vec<_>>()
                .join("*");
            Ok((bits, rank(&pattern)?, utility(&pattern)?, prob))
        })
        .collect()
}

fn cmd_rank_table(a: RankTableArgs, out: &mut dyn Write) -> Result<()> {
    let labels: Vec<String> = match (&a.scene, a.rules) {
        (Some(path), _) => {
            let scene = load_scene(path)?;
            scene
                .hierarchy
                .rules()
                .iter()
                .map(|r| format!("P({})", r.criteria.join("&")))
                .collect()
        }
        (None, Some(n)) => {
            if n == 0 || n > MAX_TABLE_RULES {
                return Err(Error::Size(format!(
                    "rank table needs between 1 and {MAX_TABLE_RULES} rules, got {n}"
                )));
            }
            (1..=n).map(|i| format!("q{i}")).collect()
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let rows = rank_table(&labels)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::domain(format!("csv output failed: {e}"));
    w.write_record(["pattern", "rank", "utility", "probability"]).map_err(csv_err)?;
    for (p, r, u, prob) in &rows {
        w.write_record([p.clone(), r.to_string(), u.to_string(), prob.clone()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::domain(format!("csv output failed: {e}")))?;
    out.write_all(&bytes).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(path) = &a.out {
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_scene_gen(a: SceneGenArgs, out: &mut dyn Write) -> Result<()> {
    let scene = make_synthetic_scene(&a.name, a.seed)?;
    let path = a.out.unwrap_or_else(|| PathBuf::from(format!("{}.json", a.name)));
    save_scene(&scene, &path)?;
    say(
        out,
        format!(
            "{} (seed {}): {} target points, {} obstacle points -> {}",
            a.name,
            a.seed,
            scene.target_cloud.len(),
            scene.obstacle_cloud.len(),
            path.display()
        ),
    )
}
