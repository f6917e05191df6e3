use std::fs;

use slowcal_core::algorithms::Algorithm;
use slowcal_core::config::{build_problem, ExperimentSpec, ProblemKind};
use slowcal_core::runner::{self, read_metrics, run_experiment, sweep, CsvRow, METRICS_FILE};
use slowcal_core::tuning::{grid_search, grid_search_with};
use tempfile::tempdir;

const SCHEMA: &str = "run_id,algorithm,problem,M,K,R,seed,round,t,eta,excess_loss,grad_norm,dispersion_q,v_increment,d_t,diverged,wall_ms";

fn small(text: &str) -> ExperimentSpec {
    let mut full = text.to_string();
    for (key, value) in [("d", "6"), ("M", "4"), ("K", "4"), ("R", "20")] {
        if !text.lines().any(|l| l.trim_start().starts_with(&format!("{key} ="))) {
            full.push_str(&format!("\n{key} = {value}"));
        }
    }
    ExperimentSpec::from_toml(&full).unwrap()
}

fn without_wall(rows: &[CsvRow]) -> Vec<CsvRow> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.wall_ms = 0.0;
            r
        })
        .collect()
}

fn strip_wall_column(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn one_row_per_round_with_fixed_schema() {
    let dir = tempdir().unwrap();
    let mut spec = ExperimentSpec::from_toml("R = 50\nd = 6\nM = 4\nK = 4\nlr = \"fixed:0.001\"").unwrap();
    spec.out_dir = dir.path().to_path_buf();
    let report = run_experiment(&spec).unwrap();
    let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), SCHEMA);
    assert_eq!(text.lines().count(), 51);
    assert_eq!(report.rows.len(), 50);
    assert!(!report.any_diverged());
    assert!(dir.path().join(runner::MANIFEST_FILE).exists());
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), 50);
}

#[test]
fn reruns_are_byte_identical_except_wall_clock() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let spec = small("algorithm = [\"local\", \"slowcal\"]\nseeds = [1, 2]\nlr = \"fixed:0.002\"\ndiagnostics = true");
    sweep(&spec, a.path()).unwrap();
    sweep(&spec, b.path()).unwrap();
    let ta = fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
    let tb = fs::read_to_string(b.path().join(METRICS_FILE)).unwrap();
    assert_eq!(strip_wall_column(&ta), strip_wall_column(&tb));
}

#[test]
fn manifest_echoes_defaults_and_reruns() {
    let dir = tempdir().unwrap();
    let spec = small("lr = \"fixed:0.002\"");
    sweep(&spec, dir.path()).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(runner::MANIFEST_FILE)).unwrap()).unwrap();
    let echoed = &manifest["spec"];
    for key in ["problem", "schedule", "eig_min", "center_norm", "sigma", "seeds", "problem_seed", "lambda"] {
        assert!(!echoed[key].is_null(), "{key} missing from manifest");
    }
    // the echoed spec reproduces the run
    let replay: ExperimentSpec = serde_json::from_value(echoed.clone()).unwrap();
    let (rows, _, _) = runner::execute_in_memory(&replay).unwrap();
    let original = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(without_wall(&rows), without_wall(&original));
}

#[test]
fn theory_step_matches_recomputed_formula() {
    let dir = tempdir().unwrap();
    let spec = small("lr = \"theory\"\nalgorithm = \"slowcal\"");
    let report = sweep(&spec, dir.path()).unwrap();
    let (m, meta) = &report.manifest.metadata[0];
    let (l, s, g, b) = (meta.smoothness, meta.sigma, meta.gstar, meta.b0);
    let (mf, k, r) = (*m as f64, 4.0f64, 20.0f64);
    let t = k * r;
    let expect = [
        1.0 / (48.0 * l * (t + 1.0)),
        1.0 / (10.0 * l * k * k),
        1.0 / (40.0 * l * k * (t + 1.0).powf(2.0 / 3.0)),
        b * mf.sqrt() / (s * t.powf(1.5)),
        b.sqrt() / (l.sqrt() * k.powf(1.75) * r * (s.sqrt() + g.sqrt())),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let eta = report.manifest.etas[0].eta;
    assert!((eta - expect).abs() <= 1e-14 * expect, "{eta} vs {expect}");
    assert!(report.rows.iter().all(|row| row.eta == eta));
    assert!(report.manifest.warnings.is_empty());

    let uniform = small("lr = \"theory\"\nschedule = \"uniform\"");
    let (_, _, manifest) = runner::execute_in_memory(&uniform).unwrap();
    assert_eq!(manifest.warnings.len(), 1);
}

#[test]
fn sweep_counts_and_ordering() {
    let dir = tempdir().unwrap();
    let spec = small("algorithm = [\"slowcal\", \"minibatch\", \"local\"]\nK = [2, 4]\nseeds = [5, 6]\nlr = \"fixed:0.002\"");
    let report = sweep(&spec, dir.path()).unwrap();
    assert_eq!(report.run_count(), 12);
    assert_eq!(report.rows.len(), 12 * 20);
    let keys: Vec<_> = report
        .rows
        .iter()
        .map(|r| (r.algorithm.clone(), r.machines, r.local_steps, r.seed, r.round))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    // a sub-sweep reproduces its rows of the full sweep
    let sub = small("algorithm = \"local\"\nK = 4\nseeds = 6\nlr = \"fixed:0.002\"");
    let (rows, _, _) = runner::execute_in_memory(&sub).unwrap();
    let matching: Vec<CsvRow> = report
        .rows
        .iter()
        .filter(|r| r.algorithm == "local" && r.local_steps == 4 && r.seed == 6)
        .cloned()
        .collect();
    assert_eq!(without_wall(&rows), without_wall(&matching));
}

#[test]
fn divergence_is_reported() {
    let spec = small("algorithm = \"local\"\nlr = \"fixed:50\"");
    let (rows, _, manifest) = runner::execute_in_memory(&spec).unwrap();
    assert_eq!(manifest.diverged_runs, vec!["local-M4-K4-s0".to_string()]);
    assert!(rows.last().unwrap().diverged);
}

#[test]
fn grid_resolution_and_errors() {
    let spec = small("algorithm = \"minibatch\"\nlr = \"grid:[0.05]\"\nseeds = [0, 1]");
    let (_, _, manifest) = runner::execute_in_memory(&spec).unwrap();
    assert_eq!(manifest.etas[0].eta, 0.05);
    assert_eq!(manifest.etas[0].source, "grid");

    let spec = small("algorithm = \"local\"\nlr = \"grid:[40, 80]\"");
    let err = runner::execute_in_memory(&spec).unwrap_err().to_string();
    assert!(err.contains("40") && err.contains("80"), "{err}");

    let mut bad = small("");
    bad.problem = ProblemKind::MnistLogistic;
    assert!(runner::execute_in_memory(&bad).is_err());
}

#[test]
fn grid_scores_equal_independent_reruns() {
    let spec = small("");
    let built = build_problem(&spec, 4, None).unwrap();
    let cfg = spec.run_config(4, 4, 0.01, 0);
    let grid = [0.003, 0.01, 0.03];
    let seeds = [3, 4];
    let result = grid_search(&built.problem, Algorithm::Local, &grid, &cfg, &seeds).unwrap();
    for row in &result.table {
        let reruns: Vec<f64> = seeds
            .iter()
            .map(|&seed| {
                let c = spec.run_config(4, 4, row.eta, seed);
                Algorithm::Local.run(&built.problem, &c).unwrap().final_excess_loss()
            })
            .collect();
        assert_eq!(row.per_seed, reruns);
        assert_eq!(row.score, (reruns[0] + reruns[1]) / 2.0);
    }
    let best = result.table.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
    assert_eq!(result.table.iter().find(|r| r.score == best).unwrap().eta, result.best_eta);

    let single = grid_search(&built.problem, Algorithm::Local, &[0.02], &cfg, &seeds).unwrap();
    assert_eq!(single.best_eta, 0.02);

    // ties go to the smaller step size
    let tied = grid_search_with(&built.problem, Algorithm::Local, &[0.02, 0.01], &cfg, &seeds, |_| 1.0).unwrap();
    assert_eq!(tied.best_eta, 0.01);
}

#[test]
fn grid_selects_per_method_on_logistic() {
    let spec = ExperimentSpec::from_toml(
        "problem = \"logistic\"\nd = 10\nclasses = 4\nspread = 0.5\nskew = 0.1\nexamples_per_machine = 100\nM = 8\nK = 16\nR = 10\nlambda = 1e-3\nlr = \"grid:[0.01, 0.1]\"\nseeds = [0, 1, 2]\nschedule = \"linear\"\nalgorithm = [\"minibatch\", \"local\", \"slowcal\"]",
    )
    .unwrap();
    let (_, eval, manifest) = runner::execute_in_memory(&spec).unwrap();
    assert_eq!(eval.len(), 9);
    for e in &manifest.etas {
        let table = &e.grid.as_ref().unwrap().table;
        let best = table.iter().min_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
        assert_eq!(best.eta, e.eta);
        // scores are mean held-out losses of the runs' outputs
        let mine: Vec<f64> = eval.iter().filter(|r| r.algorithm == e.algorithm.name()).map(|r| r.test_loss).collect();
        assert!((mine.iter().sum::<f64>() / 3.0 - best.score).abs() < 1e-12);
    }
    let chosen: Vec<(Algorithm, f64)> = manifest.etas.iter().map(|e| (e.algorithm, e.eta)).collect();
    // the larger step wins for Minibatch-SGD and the smaller for SLowcal-SGD
    assert!(chosen.contains(&(Algorithm::Minibatch, 0.1)), "{chosen:?}");
    assert!(chosen.contains(&(Algorithm::Slowcal, 0.01)), "{chosen:?}");
}

fn write_tiny_mnist(dir: &std::path::Path) {
    use slowcal_core::data::{idx_labels_to_bytes, IdxImages, MNIST_FILES};
    // 4x4 images where class c lights pixel c plus a shared background
    let make = |count: usize, offset: usize| {
        let labels: Vec<u8> = (0..count).map(|i| ((i + offset) % 10) as u8).collect();
        let mut pixels = vec![0u8; count * 16];
        for (i, &y) in labels.iter().enumerate() {
            pixels[i * 16 + y as usize] = 255;
            pixels[i * 16 + 10 + (i % 6)] = 80;
        }
        let images = IdxImages {
            count,
            rows: 4,
            cols: 4,
            pixels,
        };
        (images.to_bytes(), idx_labels_to_bytes(&labels))
    };
    let (train_x, train_y) = make(400, 0);
    let (test_x, test_y) = make(100, 3);
    for (name, bytes) in MNIST_FILES.iter().zip([train_x, train_y, test_x, test_y]) {
        fs::write(dir.join(name), bytes).unwrap();
    }
}

#[test]
fn mnist_pipeline_on_generated_idx_files() {
    let data = tempdir().unwrap();
    write_tiny_mnist(data.path());
    let out = tempdir().unwrap();
    let mut spec = ExperimentSpec::from_toml(
        "problem = \"mnist-logistic\"\nalgorithm = [\"minibatch\", \"local\", \"slowcal\"]\nM = 4\nK = 4\nR = 30\nlr = \"grid:[0.01, 0.1]\"\ndirichlet_alpha = 1.0",
    )
    .unwrap();
    spec.data_dir = Some(data.path().to_path_buf());
    let report = sweep(&spec, out.path()).unwrap();
    assert_eq!(report.eval.len(), 3);
    assert!(out.path().join(runner::EVAL_FILE).exists());
    for row in &report.eval {
        assert!(row.test_loss.is_finite());
        assert!(row.test_accuracy > 0.5, "{}: {}", row.run_id, row.test_accuracy);
    }
    // no optimum is known, so the excess-loss column carries the raw loss
    assert!(report.rows.iter().all(|r| r.d_t.is_none() || r.d_t.unwrap().is_nan()));
}
