//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::Matrix6;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive};
use rand::Rng;
use rulegrasp::bench::{mean_std, run_benchmark, BenchConfig, BenchScene};
use rulegrasp::criteria::{
    collision_free_probability, mean_gripper_sdf, stability_score, Collision, CriterionEvaluator, EvaluatorRegistry,
    Intention, Stability,
};
use rulegrasp::geometry::{Pose, SerialChain};
use rulegrasp::hierarchy::{
    expected_utility, log_lower_bound, rank, utility, RuleHierarchy, RuleProbabilities, SatisfactionPattern,
    COLLISION, EXECUTION, STABILITY,
};
use rulegrasp::optimizer::{filter_baseline, grace_opt, Objective, OptimizerConfig, SamplerSpec};
use rulegrasp::synthetic::make_synthetic_scene;

use common::*;

type Check = fn() -> (bool, String);

fn main() {
    let checks: [(u32, &str, Check); 10] = [
        (1, "rank preservation", rank_preservation),
        (2, "expected utility", expected_utility_matches_enumeration),
        (3, "jensen bound", jensen_bound),
        (4, "gradient correctness", gradient_correctness),
        (5, "kinematics oracle", kinematics_oracle),
        (6, "sample efficiency on slot", sample_efficiency),
        (7, "ablation ordering on slot", ablation_ordering),
        (8, "degenerate reduction", degenerate_reduction),
        (9, "cli determinism", cli_determinism),
        (10, "intention trade-off", intention_tradeoff),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let (pass, detail) = match std::panic::catch_unwind(check) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} ({name}): {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn bits_of(n: usize, mask: u64) -> Vec<bool> {
    (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect()
}

/// Lexicographic preference: the first differing rule decides.
fn lex_better(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, _)| *x)
}

fn rank_preservation() -> (bool, String) {
    let start = Instant::now();
    let mut pairs = 0u64;
    for n in 1..=8usize {
        let total = 1u64 << n;
        let table: Vec<(Vec<bool>, u64, u64)> = (0..total)
            .map(|m| {
                let p = SatisfactionPattern::from_mask(n, m);
                (bits_of(n, m), rank(&p).unwrap(), utility(&p).unwrap())
            })
            .collect();
        for (a, ra, ua) in &table {
            for (b, rb, ub) in &table {
                pairs += 1;
                let by_rank = ra < rb;
                if by_rank != (ua > ub) || by_rank != lex_better(a, b) {
                    return (false, format!("N={n}: pattern {a:?} vs {b:?} disagree"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (secs < 5.0, format!("{pairs} pairs exact, {secs:.2} s (limit 5 s)"))
}

fn random_criteria(rng: &mut rand_chacha::ChaCha8Rng, n: usize, lo: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..rng.random_range(1..=3)).map(|_| rng.random_range(lo..=1.0)).collect())
        .collect()
}

fn expected_utility_matches_enumeration() -> (bool, String) {
    let start = Instant::now();
    let mut rng = rng(2);
    let mut worst_exact = 0.0f64;
    let mut worst_sigma = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=10usize);
        let criteria = random_criteria(&mut rng, n, 0.0);
        let probs = RuleProbabilities::from_criteria(criteria.clone()).unwrap();
        let analytic = expected_utility(&probs).unwrap();

        // Exact rational enumeration, so the oracle adds no rounding of its own.
        let exact = |x: f64| BigRational::from_float(x).expect("finite probability");
        let one = BigRational::one();
        let q: Vec<BigRational> = criteria.iter().map(|c| c.iter().map(|&p| exact(p)).product()).collect();
        let brute: BigRational = (0..1u64 << n)
            .map(|m| {
                let bits = bits_of(n, m);
                let p: BigRational = bits
                    .iter()
                    .zip(&q)
                    .map(|(&b, qi)| if b { qi.clone() } else { &one - qi })
                    .product();
                let r = 1 + bits
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| !b)
                    .map(|(i, _)| 1u64 << (n - 1 - i))
                    .sum::<u64>();
                p * BigRational::from_integer(BigInt::from(r))
            })
            .sum();
        let brute = -brute.to_f64().expect("representable");
        worst_exact = worst_exact.max((analytic - brute).abs());

        let draws = 100_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..draws {
            let r = 1 + criteria
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.iter().all(|&p| rng.random::<f64>() < p))
                .map(|(i, _)| 1u64 << (n - 1 - i))
                .sum::<u64>();
            let x = -(r as f64);
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / draws as f64;
        let var = (sum2 / draws as f64 - mean * mean).max(0.0) * draws as f64 / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let sigma = if se > 0.0 {
            (mean - analytic).abs() / se
        } else if (mean - analytic).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_sigma = worst_sigma.max(sigma);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_exact <= 1e-12 && worst_sigma <= 3.0 && secs < 30.0,
        format!(
            "max |U - enumeration| {worst_exact:.1e} (tol 1e-12), max Monte-Carlo deviation {worst_sigma:.2} SE (tol 3), {secs:.1} s (limit 30 s)"
        ),
    )
}

fn jensen_bound() -> (bool, String) {
    let mut rng = rng(3);
    let mut min_slack = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10usize);
        let probs = RuleProbabilities::from_criteria(random_criteria(&mut rng, n, 0.01)).unwrap();
        let slack = expected_utility(&probs).unwrap() + (n as f64).exp2() - log_lower_bound(&probs).exp();
        min_slack = min_slack.min(slack);
    }
    let mut worst_equality = 0.0f64;
    for i in 0..=100 {
        let p = i as f64 / 100.0;
        let probs = RuleProbabilities::from_criteria(vec![vec![p]]).unwrap();
        let lhs = log_lower_bound(&probs).exp();
        let rhs = expected_utility(&probs).unwrap() + 2.0;
        // p = 0 is clamped to the log floor.
        if p > 0.0 {
            worst_equality = worst_equality.max((lhs - rhs).abs());
        }
    }
    (
        min_slack >= -1e-12 && worst_equality <= 1e-15,
        format!("min slack {min_slack:.3e} over 1000 instances (tol -1e-12), N=1 equality gap {worst_equality:.1e}"),
    )
}

fn gradient_correctness() -> (bool, String) {
    let mut rng = rng(4);
    let mut report = Vec::new();
    let mut ok = true;
    for which in ["collision", "stability", "intention"] {
        let (mut accepted, mut kinks, mut worst, mut informative) = (0, 0, 0.0f64, 0);
        let mut worst_fine = 0.0f64;
        while accepted < 100 {
            let mut scene = random_scene(&mut rng);
            let err = match which {
                "collision" => {
                    let pose = pose_near_target(&mut rng, &scene, 0.05);
                    if collision_kink(&pose, &scene) {
                        kinks += 1;
                        continue;
                    }
                    let (d, _) = mean_gripper_sdf(&pose, &scene).unwrap().unwrap();
                    scene.params.d_th = (d + rng.random_range(-0.02..0.02)).max(1e-3);
                    let g = gradient_error(&Collision, &pose, &scene);
                    worst_fine = worst_fine.max(gradient_error_with_step(&Collision, &pose, &scene, 1e-6));
                    informative += usize::from(Collision.gradient(&pose, &scene).unwrap().norm() > 1e-3);
                    g
                }
                "stability" => {
                    let pose = pose_near_target(&mut rng, &scene, 0.01);
                    if stability_kink(&pose, &scene) {
                        kinks += 1;
                        continue;
                    }
                    let (a, _) = stability_score(&pose, &scene).unwrap();
                    scene.params.tau_s = (a + rng.random_range(-0.5..0.5)).max(1e-3);
                    informative += usize::from(Stability.gradient(&pose, &scene).unwrap().norm() > 1e-3);
                    worst_fine = worst_fine.max(gradient_error_with_step(&Stability, &pose, &scene, 1e-6));
                    gradient_error(&Stability, &pose, &scene)
                }
                _ => {
                    let pose = pose_near_target(&mut rng, &scene, 0.03);
                    if intention_kink(&pose, &scene) {
                        kinks += 1;
                        continue;
                    }
                    let d = scene.affordance_regions[0].region.distance(pose.translation());
                    scene.params.rho_th = (d + rng.random_range(-0.02..0.02)).max(1e-3);
                    informative += usize::from(Intention.gradient(&pose, &scene).unwrap().norm() > 1e-3);
                    worst_fine = worst_fine.max(gradient_error_with_step(&Intention, &pose, &scene, 1e-6));
                    gradient_error(&Intention, &pose, &scene)
                }
            };
            worst = worst.max(err);
            accepted += 1;
        }
        ok &= worst <= GRADIENT_TOLERANCE;
        report.push(format!("{which} max rel err {worst:.1e} ({informative} informative, {kinks} kink draws skipped, {worst_fine:.1e} at h 1e-6)"));
    }
    (ok, format!("{} (tol 1e-4, h 1e-5)", report.join("; ")))
}

fn kinematics_oracle() -> (bool, String) {
    let mut rng = rng(5);
    let mut worst_manip = 0.0f64;
    for i in 0..100 {
        let (l1, l2) = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let chain = SerialChain::planar(&[l1, l2]).unwrap();
        let t2 = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 99.0;
        let theta = [rng.random_range(-3.0..3.0), t2];
        let w = chain.manipulability(&theta).unwrap();
        worst_manip = worst_manip.max((w - (l1 * l2 * t2.sin()).abs()).abs());
    }

    let mut worst_jac = 0.0f64;
    let h = 1e-6;
    let arm = SerialChain::six_dof_arm(Pose::identity());
    let planar = SerialChain::planar(&[0.4, 0.3, 0.2]).unwrap();
    for chain in [&arm, &planar] {
        for _ in 0..50 {
            let theta: Vec<f64> = (0..chain.dof()).map(|_| rng.random_range(-2.5..2.5)).collect();
            let jac = chain.jacobian(&theta).unwrap();
            for j in 0..chain.dof() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fp = chain.forward_kinematics(&tp).unwrap();
                let fm = chain.forward_kinematics(&tm).unwrap();
                let lin = (fp.translation() - fm.translation()) / (2.0 * h);
                let ang = (fp.rotation() * fm.rotation().inverse()).scaled_axis() / (2.0 * h);
                for k in 0..3 {
                    worst_jac = worst_jac.max((jac[(k, j)] - lin[k]).abs());
                    worst_jac = worst_jac.max((jac[(k + 3, j)] - ang[k]).abs());
                }
            }
        }
    }
    (
        worst_manip <= 1e-9 && worst_jac <= 1e-5,
        format!("planar manipulability max err {worst_manip:.1e} (tol 1e-9), Jacobian vs differences max err {worst_jac:.1e} (tol 1e-5)"),
    )
}

fn sample_efficiency() -> (bool, String) {
    let start = Instant::now();
    let config = BenchConfig {
        scene: BenchScene::Synthetic { name: "slot".into() },
        seeds: (0..20).collect(),
        filter_sizes: vec![50, 1000],
        ablation: false,
        ..BenchConfig::default()
    };
    let report = run_benchmark(&config).unwrap();
    let top10 = |m: &str| report.runs_for(m).map(|r| r.top10_mean_utility).collect::<Vec<_>>();
    let (g, gs) = mean_std(&top10("grace"));
    let (f1000, _) = mean_std(&top10("filter-1000"));
    let (f50, f50s) = mean_std(&top10("filter-50"));
    let pooled = ((gs * gs + f50s * f50s) / 2.0).sqrt();
    let secs = start.elapsed().as_secs_f64();
    (
        g >= f1000 && g - f50 > pooled && secs < 300.0,
        format!(
            "top-10 mean utility: grace {g:.4} +- {gs:.4}, filter-1000 {f1000:.4}, filter-50 {f50:.4} +- {f50s:.4}; margin over filter-50 {:.4} vs pooled std {pooled:.4}; {secs:.0} s (limit 300 s)",
            g - f50
        ),
    )
}

fn top10_collision_free(hierarchy: &RuleHierarchy, seed: u64) -> f64 {
    let scene = make_synthetic_scene("slot", seed).unwrap();
    let objective = Objective::new(&scene, hierarchy, &EvaluatorRegistry::builtin()).unwrap();
    let run = grace_opt(&objective, &OptimizerConfig { seed, ..Default::default() }, &SamplerSpec::default()).unwrap();
    let top = &run.batch.grasps[..10];
    top.iter()
        .filter(|g| collision_free_probability(&g.pose, &scene).unwrap() > 0.5)
        .count() as f64
        / top.len() as f64
}

fn ablation_ordering() -> (bool, String) {
    let se = RuleHierarchy::new(vec![vec![STABILITY], vec![EXECUTION]]).unwrap();
    let sec = RuleHierarchy::new(vec![vec![STABILITY], vec![EXECUTION, COLLISION]]).unwrap();
    let mean = |h: &RuleHierarchy| (0..20).map(|s| top10_collision_free(h, s)).sum::<f64>() / 20.0;
    let (f_se, f_sec) = (mean(&se), mean(&sec));
    (
        f_sec > f_se,
        format!("top-10 collision-free fraction over 20 seeds: SEC {f_sec:.3}, SE {f_se:.3}"),
    )
}

fn degenerate_reduction() -> (bool, String) {
    let mut rng = rng(8);
    for k in 0..10 {
        let scene = random_scene(&mut rng);
        let objective = Objective::for_scene(&scene).unwrap();
        let n = rng.random_range(5..40usize);
        let q = rng.random_range(1..=n);
        let seed = rng.random::<u64>();
        let config = OptimizerConfig {
            outer_iterations: 1,
            inner_steps: 0,
            covariance: Matrix6::zeros(),
            batch: n,
            select: q,
            seed,
            ..Default::default()
        };
        let sampler = SamplerSpec::default();
        let g = grace_opt(&objective, &config, &sampler).unwrap().batch;
        let f = filter_baseline(&objective, &sampler, n, q, seed).unwrap().batch;
        let bits = |b: &rulegrasp::optimizer::GraspBatch| -> Vec<u64> {
            b.grasps
                .iter()
                .flat_map(|x| {
                    let t = x.pose.translation();
                    let r = x.pose.rotation().quaternion();
                    [t.x, t.y, t.z, r.w, r.i, r.j, r.k, x.score.utility, x.score.lower_bound]
                })
                .map(f64::to_bits)
                .collect()
        };
        if g != f || bits(&g) != bits(&f) {
            return (false, format!("scene {k}: optimizer output differs from filter (n={n}, Q={q})"));
        }
    }
    (true, "10 random scenes bit-identical".into())
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_cli_session(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let exe = env!("CARGO_BIN_EXE_rulegrasp");
    let commands: [&[&str]; 5] = [
        &["scene", "gen", "slot", "--seed", "4", "--out", "slot.json"],
        &["optimize", "--scene", "slot.json", "--seed", "9", "--outer", "3", "--out", "opt.json"],
        &["filter", "--scene", "slot.json", "--seed", "9", "--samples", "300", "--out", "filter.json"],
        &[
            "bench", "--synthetic", "open", "--seeds", "2", "--samples", "10", "--top", "10", "--outer", "2", "--inner", "1",
            "--filter-sizes", "10,20", "--out", "bench",
        ],
        &["rank-table", "--rules", "3", "--out", "ranks.csv"],
    ];
    let mut stdout = Vec::new();
    for args in commands {
        let out = Command::new(exe).args(args).current_dir(dir).output().unwrap();
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        stdout.push((args[0].to_string(), out.stdout));
    }
    stdout
}

fn cli_determinism() -> (bool, String) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = run_cli_session(a.path());
    let out_b = run_cli_session(b.path());
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let stdout_same = out_a == out_b;
    (
        differing.is_empty() && stdout_same && fa.len() >= 10,
        format!(
            "{} output files compared across two runs, {} differ; stdout identical: {stdout_same}",
            fa.len(),
            differing.len()
        ),
    )
}

fn intention_tradeoff() -> (bool, String) {
    let top1 = |name: &str, seed: u64| {
        let scene = make_synthetic_scene(name, seed).unwrap();
        let objective = Objective::for_scene(&scene).unwrap();
        let run = grace_opt(&objective, &OptimizerConfig { seed, ..Default::default() }, &SamplerSpec::default()).unwrap();
        let best = run.batch.grasps[0].clone();
        (
            collision_free_probability(&best.pose, &scene).unwrap(),
            best.score.criteria["intention"],
        )
    };
    let blocked = (0..20)
        .filter(|&s| {
            let (c, n) = top1("intent-blocked", s);
            c > 0.5 && n < 0.5
        })
        .count();
    let clear = (0..20).filter(|&s| top1("intent-clear", s).1 > 0.5).count();
    (
        blocked >= 18 && clear >= 18,
        format!("blocked scene {blocked}/20 top-1 collision-free and off-intent, clear scene {clear}/20 top-1 on-intent (need 18 each)"),
    )
}
