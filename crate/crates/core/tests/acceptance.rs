//! Acceptance criteria A1-A7. Runs without the libtest harness so that one
//! PASS/FAIL line per criterion is always printed.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use slowcal_core::algorithms::{Algorithm, Problem, RunConfig};
use slowcal_core::config::{ExperimentSpec, LrSpec, ProblemKind};
use slowcal_core::data::{self, dirichlet_partition, ClusterSpec, MNIST_FILES};
use slowcal_core::metrics::final_quarter_mean;
use slowcal_core::objectives::{CurvatureKind, LogisticEnsemble, Objective, QuadraticSpec};
use slowcal_core::rng::SampleKey;
use slowcal_core::runner;
use slowcal_core::tuning::{grid_search, log_grid, rmin, RateMethod};
use slowcal_core::verify::verify_suite;
use slowcal_core::weights::WeightSchedule;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn judge(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_budget(outcome: Outcome, started: Instant, budget_s: f64) -> Outcome {
    let secs = started.elapsed().as_secs_f64();
    let timing = format!(" [{secs:.1} s, budget {budget_s:.0} s]");
    match outcome {
        Outcome::Pass(d) if secs <= budget_s => Outcome::Pass(d + &timing),
        Outcome::Pass(d) => Outcome::Fail(d + &timing + " over budget"),
        Outcome::Fail(d) => Outcome::Fail(d + &timing),
        skip => skip,
    }
}

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn a1() -> Outcome {
    match verify_suite() {
        Ok(report) => {
            for c in report.failures() {
                println!("    {c}");
            }
            let passed = report.checks.iter().filter(|c| c.passed).count();
            judge(report.all_passed(), format!("{passed}/{} identity checks", report.checks.len()))
        }
        Err(e) => Outcome::Fail(format!("suite error: {e}")),
    }
}

/// Largest |mean - exact| / standard error over coordinates.
fn unbiasedness_z(objective: &dyn Objective, machine: usize, x: &[f64], draws: u64) -> f64 {
    let d = objective.dim();
    let exact = objective.exact_gradient(machine, x).unwrap();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for n in 0..draws {
        let g = objective
            .stochastic_gradient(machine, x, SampleKey::new(99, machine, 0, n))
            .unwrap();
        for j in 0..d {
            sum[j] += g[j];
            sum_sq[j] += g[j] * g[j];
        }
    }
    let n = draws as f64;
    (0..d)
        .map(|j| {
            let mean = sum[j] / n;
            let var = (sum_sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            if se == 0.0 {
                if (mean - exact[j]).abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (mean - exact[j]).abs() / se
            }
        })
        .fold(0.0, f64::max)
}

fn top2_mass(labels: &[u32], shard: &[usize], classes: usize) -> f64 {
    let mut h = vec![0usize; classes];
    for &i in shard {
        h[labels[i] as usize] += 1;
    }
    h.sort_unstable_by(|a, b| b.cmp(a));
    (h[0] + h.get(1).copied().unwrap_or(0)) as f64 / shard.len().max(1) as f64
}

fn a2() -> Outcome {
    let draws = 100_000;
    let sigma = 1.5;
    let q = QuadraticSpec {
        dim: 5,
        machines: 3,
        curvature: CurvatureKind::PerMachine,
        eig_min: 0.1,
        eig_max: 1.0,
        center_norm: 1.0,
        center_spread: 1.0,
        gstar_target: None,
        sigma,
        seed: 3,
    }
    .build()
    .unwrap();
    let x = vec![0.3, -0.2, 0.5, 1.0, -1.0];
    let z_quad = unbiasedness_z(&q, 1, &x, draws);

    // noise power E‖g - ∇f_i‖² = σ²
    let exact = q.exact_gradient(2, &x).unwrap();
    let power = (0..draws)
        .map(|n| {
            let g = q.stochastic_gradient(2, &x, SampleKey::new(5, 2, 1, n)).unwrap();
            g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        / draws as f64;
    let power_rel = (power / (sigma * sigma) - 1.0).abs();

    // sampled-example gradient of the logistic model
    let (shards, _) = data::synth_clusters(&ClusterSpec {
        machines: 2,
        dim: 4,
        classes: 3,
        spread: 0.5,
        skew: 1.0,
        examples_per_machine: 50,
        seed: 4,
    })
    .unwrap();
    let model = LogisticEnsemble::new(shards, 1e-3).unwrap();
    let w: Vec<f64> = (0..model.dim()).map(|i| 0.1 * (i as f64 % 5.0) - 0.2).collect();
    let z_logit = unbiasedness_z(&model, 0, &w, draws);

    // Dirichlet heterogeneity: MNIST training labels when present, else
    // balanced 10-class labels of the same size
    let (labels, source) = match mnist_dir().and_then(|d| data::load_mnist(&d).ok()) {
        Some((train, _)) => (train.labels().to_vec(), "MNIST labels"),
        None => ((0..60_000u32).map(|i| i % 10).collect(), "balanced synthetic labels"),
    };
    let mut worst_concentrated = usize::MAX;
    for seed in 0..5 {
        let p = dirichlet_partition(&labels, 16, 0.1, seed).unwrap();
        let concentrated = p.shards().iter().filter(|s| top2_mass(&labels, s, 10) >= 0.8).count();
        worst_concentrated = worst_concentrated.min(concentrated);
    }

    judge(
        z_quad <= 4.0 && z_logit <= 4.0 && power_rel <= 0.02 && worst_concentrated >= 8,
        format!(
            "unbiasedness max z {z_quad:.2} (quadratic), {z_logit:.2} (logistic) <= 4; noise power rel err {:.2}% <= 2%; \
             min concentrated machines over 5 seeds {worst_concentrated}/16 >= 8 ({source})",
            100.0 * power_rel
        ),
    )
}

fn a3_problem() -> Problem {
    let q = QuadraticSpec {
        dim: 20,
        machines: 8,
        curvature: CurvatureKind::PerMachine,
        eig_min: 1e-3,
        eig_max: 1.0,
        center_norm: 10.0,
        center_spread: 1.0,
        gstar_target: Some(2.0),
        sigma: 1.0,
        seed: 1,
    }
    .build()
    .unwrap();
    Problem::from_origin(Arc::new(q)).unwrap()
}

fn a3_config(eta: f64, diagnostics: bool) -> RunConfig {
    RunConfig {
        machines: 8,
        local_steps: 16,
        rounds: 50,
        eta,
        schedule: WeightSchedule::Linear,
        seed: 0,
        record_diagnostics: diagnostics,
    }
}

/// Tuned step size and mean final excess loss of each method.
fn a3_tuned(problem: &Problem) -> Vec<(Algorithm, f64, f64)> {
    let grid = log_grid(1e-3, 1e-1, 7);
    [Algorithm::Minibatch, Algorithm::Local, Algorithm::Slowcal]
        .into_iter()
        .map(|alg| {
            let res = grid_search(problem, alg, &grid, &a3_config(grid[0], false), &SEEDS).unwrap();
            let score = res.table.iter().find(|r| r.eta == res.best_eta).unwrap().score;
            (alg, res.best_eta, score)
        })
        .collect()
}

fn a3(tuned: &[(Algorithm, f64, f64)]) -> Outcome {
    let get = |a: Algorithm| tuned.iter().find(|t| t.0 == a).unwrap().2;
    let (mb, local, slow) = (get(Algorithm::Minibatch), get(Algorithm::Local), get(Algorithm::Slowcal));
    let detail = tuned
        .iter()
        .map(|(a, eta, s)| format!("{a} {s:.4e} @ eta {eta:.2e}"))
        .collect::<Vec<_>>()
        .join("; ");
    judge(slow <= local && slow <= mb, format!("mean final excess loss: {detail}"))
}

fn a4() -> Outcome {
    let grid = log_grid(1e-5, 1.0, 21);
    let mut parts = Vec::new();
    let mut ok = true;
    for alg in [Algorithm::Minibatch, Algorithm::Slowcal] {
        let mut best = Vec::new();
        for m in [8usize, 16] {
            let q = QuadraticSpec {
                dim: 20,
                machines: m,
                curvature: CurvatureKind::Shared,
                eig_min: 1e-3,
                eig_max: 1.0,
                center_norm: 3.0,
                center_spread: 1.0,
                gstar_target: Some(0.0),
                sigma: 5.0,
                seed: 1,
            }
            .build()
            .unwrap();
            let p = Problem::from_origin(Arc::new(q)).unwrap();
            let cfg = RunConfig {
                machines: m,
                local_steps: 8,
                rounds: 40,
                eta: grid[0],
                schedule: WeightSchedule::Linear,
                seed: 0,
                record_diagnostics: false,
            };
            let res = grid_search(&p, alg, &grid, &cfg, &SEEDS).unwrap();
            best.push(res.table.iter().find(|r| r.eta == res.best_eta).unwrap().score);
        }
        let ratio = best[0] / best[1];
        ok &= (1.2..=1.7).contains(&ratio);
        parts.push(format!("{alg} {:.3e} -> {:.3e} (x{ratio:.3})", best[0], best[1]));
    }
    judge(ok, format!("M 8 -> 16 reduction in [1.2, 1.7]: {}", parts.join("; ")))
}

fn a5() -> Outcome {
    let mut violations = 0;
    let mut cases = 0;
    for m in 2..=64 {
        for k in 16..=256 {
            cases += 1;
            let s = rmin(RateMethod::Slowcal, m, k, 1.0).unwrap();
            let mb = rmin(RateMethod::Minibatch, m, k, 0.0).unwrap();
            if !(s < mb) {
                violations += 1;
            }
        }
    }
    judge(violations == 0, format!("{} of {cases} (M, K) pairs ordered", cases - violations))
}

fn a6(problem: &Problem, tuned: &[(Algorithm, f64, f64)]) -> Outcome {
    let q_mean = |alg: Algorithm| {
        let eta = tuned.iter().find(|t| t.0 == alg).unwrap().1;
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = RunConfig {
                    seed,
                    ..a3_config(eta, true)
                };
                let traj = alg.run(problem, &cfg).unwrap();
                final_quarter_mean(&traj.round_metrics(), |m| m.dispersion_q)
            })
            .sum::<f64>()
            / SEEDS.len() as f64
    };
    let (local, slow) = (q_mean(Algorithm::Local), q_mean(Algorithm::Slowcal));
    judge(slow < local, format!("final-quarter mean Q: slowcal {slow:.4e} < local {local:.4e}"))
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("SLOWCAL_MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| MNIST_FILES.iter().all(|f| d.join(f).exists()))
}

fn a7() -> Outcome {
    let Some(dir) = mnist_dir() else {
        return Outcome::Skip("MNIST files not found (set SLOWCAL_MNIST_DIR)".into());
    };
    let spec = ExperimentSpec {
        problem: ProblemKind::MnistLogistic,
        algorithm: vec![Algorithm::Minibatch, Algorithm::Local, Algorithm::Slowcal],
        schedule: WeightSchedule::Linear,
        machines: vec![16],
        local_steps: vec![4, 64],
        total_steps: Some(2560),
        lr: LrSpec::Grid(vec![0.01, 0.1]),
        seeds: vec![0, 1, 2],
        dirichlet_alpha: 0.1,
        lambda: 1e-4,
        data_dir: Some(dir),
        ..ExperimentSpec::default()
    };
    let (_, eval, _) = match runner::execute_in_memory(&spec) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("run error: {e}")),
    };
    let acc = |alg: &str, k: usize| {
        let v: Vec<f64> = eval
            .iter()
            .filter(|r| r.algorithm == alg && r.local_steps == k)
            .map(|r| r.test_accuracy)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (s, l, m) = (acc("slowcal", 64), acc("local", 64), acc("minibatch", 64));
    let slack = 0.005;
    judge(
        s >= l - slack && l >= m - slack,
        format!(
            "K=64 test accuracy slowcal {s:.4} >= local {l:.4} >= minibatch {m:.4} (slack 0.005); K=4: slowcal {:.4}, local {:.4}, minibatch {:.4}",
            acc("slowcal", 4),
            acc("local", 4),
            acc("minibatch", 4)
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes arguments through; a filter that does
    // not match "acceptance" skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }

    let mut results = Vec::new();
    let start = Instant::now();
    results.push(("A1", within_budget(a1(), start, 5.0)));
    let start = Instant::now();
    results.push(("A2", within_budget(a2(), start, 30.0)));

    let start = Instant::now();
    let problem = a3_problem();
    let tuned = a3_tuned(&problem);
    results.push(("A3", within_budget(a3(&tuned), start, 120.0)));

    let start = Instant::now();
    results.push(("A4", within_budget(a4(), start, 120.0)));
    results.push(("A5", a5()));

    let start = Instant::now();
    results.push(("A6", within_budget(a6(&problem, &tuned), start, 120.0)));

    let start = Instant::now();
    results.push(("A7", within_budget(a7(), start, 900.0)));

    let mut failed = false;
    println!();
    for (name, outcome) in &results {
        match outcome {
            Outcome::Pass(d) => println!("{name} PASS  {d}"),
            Outcome::Fail(d) => {
                failed = true;
                println!("{name} FAIL  {d}");
            }
            Outcome::Skip(d) => println!("{name} SKIP  {d}"),
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
