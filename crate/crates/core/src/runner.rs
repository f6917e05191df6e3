//! Experiment execution: step-size resolution, runs over the cartesian
//! product of `algorithm x M x K x seed`, and CSV / manifest output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, Trajectory};
use crate::config::{build_problem, BuiltProblem, ExperimentSpec, LrSpec, MnistData};
use crate::data;
use crate::error::{Error, Result};
use crate::objectives::ProblemMetadata;
use crate::tuning::{grid_search_with, theoretical_lr, GridResult, LrInputs};
use crate::weights::WeightSchedule;

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One row of the long-format metrics file. Column order is the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub algorithm: String,
    pub problem: String,
    #[serde(rename = "M")]
    pub machines: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    pub seed: u64,
    pub round: u64,
    pub t: u64,
    pub eta: f64,
    pub excess_loss: f64,
    pub grad_norm: f64,
    pub dispersion_q: f64,
    pub v_increment: f64,
    pub d_t: Option<f64>,
    pub diverged: bool,
    pub wall_ms: f64,
}

/// Held-out evaluation of a run's output (classification problems).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run_id: String,
    pub algorithm: String,
    #[serde(rename = "M")]
    pub machines: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    pub seed: u64,
    pub eta: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Step size chosen for one `(algorithm, M, K)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedEta {
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub machines: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    pub eta: f64,
    pub source: String,
    pub grid: Option<GridResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub csv_schema_version: u32,
    pub created_unix_ms: u128,
    pub spec: ExperimentSpec,
    pub etas: Vec<ResolvedEta>,
    /// Problem metadata for each machine count, when available.
    pub metadata: Vec<(usize, ProblemMetadata)>,
    pub warnings: Vec<String>,
    pub diverged_runs: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub rows: Vec<CsvRow>,
    pub eval: Vec<EvalRow>,
    pub manifest: Manifest,
}

impl ExperimentReport {
    pub fn any_diverged(&self) -> bool {
        !self.manifest.diverged_runs.is_empty()
    }

    pub fn run_count(&self) -> usize {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.run_id.as_str()).collect();
        ids.dedup();
        ids.len()
    }
}

pub fn run_id(algorithm: Algorithm, machines: usize, local_steps: usize, seed: u64) -> String {
    format!("{algorithm}-M{machines}-K{local_steps}-s{seed}")
}

/// Runs `spec` and writes its outputs to `spec.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    execute(spec, &spec.out_dir)
}

/// Runs the full cartesian product of `spec` and writes one combined CSV
/// into `out`.
pub fn sweep(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport> {
    execute(spec, out)
}

/// Runs without touching the filesystem.
pub fn execute_in_memory(spec: &ExperimentSpec) -> Result<(Vec<CsvRow>, Vec<EvalRow>, Manifest)> {
    spec.validate()?;
    let mnist = load_mnist_if_needed(spec)?;
    let mut warnings = Vec::new();
    if spec.lr == LrSpec::Theory && spec.schedule != WeightSchedule::Linear {
        warnings.push(format!(
            "lr = theory is derived for linear weights; applying it with schedule `{}` is an extrapolation",
            spec.schedule
        ));
    }

    let problems: Vec<(usize, BuiltProblem)> = spec
        .machines
        .par_iter()
        .map(|&m| Ok((m, build_problem(spec, m, mnist.as_ref())?)))
        .collect::<Result<_>>()?;

    let cells: Vec<(Algorithm, usize, usize)> = spec
        .algorithm
        .iter()
        .flat_map(|&a| {
            spec.machines
                .iter()
                .flat_map(move |&m| spec.local_steps.iter().map(move |&k| (a, m, k)))
        })
        .collect();

    let results: Vec<(ResolvedEta, Vec<(Vec<CsvRow>, Option<EvalRow>, bool)>)> = cells
        .par_iter()
        .map(|&(algorithm, m, k)| {
            let built = &problems.iter().find(|(pm, _)| *pm == m).expect("problem built for every M").1;
            let resolved = resolve_eta(spec, built, algorithm, m, k)?;
            let runs = spec
                .seeds
                .par_iter()
                .map(|&seed| {
                    let cfg = spec.run_config(m, k, resolved.eta, seed);
                    let traj = algorithm.run(&built.problem, &cfg)?;
                    let id = run_id(algorithm, m, k, seed);
                    let rows = csv_rows(spec, &id, algorithm, m, k, cfg.rounds, seed, &traj);
                    let eval = evaluate(built, &id, algorithm, m, k, cfg.rounds, seed, &traj);
                    Ok((rows, eval, traj.diverged))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((resolved, runs))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut eval = Vec::new();
    let mut etas = Vec::new();
    let mut diverged_runs = Vec::new();
    for (resolved, runs) in results {
        etas.push(resolved);
        for (r, e, diverged) in runs {
            if diverged {
                diverged_runs.push(r[0].run_id.clone());
            }
            rows.extend(r);
            eval.extend(e);
        }
    }
    rows.sort_by(|a, b| {
        (a.algorithm.as_str(), a.machines, a.local_steps, a.seed, a.round).cmp(&(
            b.algorithm.as_str(),
            b.machines,
            b.local_steps,
            b.seed,
            b.round,
        ))
    });
    eval.sort_by(|a, b| {
        (a.algorithm.as_str(), a.machines, a.local_steps, a.seed).cmp(&(b.algorithm.as_str(), b.machines, b.local_steps, b.seed))
    });
    diverged_runs.sort();

    let manifest = Manifest {
        csv_schema_version: CSV_SCHEMA_VERSION,
        created_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
        spec: spec.clone(),
        etas,
        metadata: problems
            .iter()
            .filter_map(|(m, b)| b.metadata.clone().map(|meta| (*m, meta)))
            .collect(),
        warnings,
        diverged_runs,
    };
    Ok((rows, eval, manifest))
}

fn execute(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (rows, eval, mut manifest) = execute_in_memory(spec)?;
    manifest.spec.out_dir = out.to_path_buf();
    write_csv(&out.join(METRICS_FILE), &rows)?;
    if !eval.is_empty() {
        write_csv(&out.join(EVAL_FILE), &eval)?;
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentReport {
        out_dir: out.to_path_buf(),
        rows,
        eval,
        manifest,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn load_mnist_if_needed(spec: &ExperimentSpec) -> Result<Option<MnistData>> {
    if spec.problem != crate::config::ProblemKind::MnistLogistic {
        return Ok(None);
    }
    let dir = spec
        .data_dir
        .as_ref()
        .ok_or_else(|| Error::field("data_dir", "mnist-logistic needs a data directory"))?;
    data::load_mnist(dir).map(Some)
}

/// Step size of one cell according to `spec.lr`.
pub fn resolve_eta(spec: &ExperimentSpec, built: &BuiltProblem, algorithm: Algorithm, machines: usize, local_steps: usize) -> Result<ResolvedEta> {
    let rounds = spec.rounds_for(local_steps);
    let (eta, source, grid) = match &spec.lr {
        LrSpec::Fixed(v) => (*v, "fixed".to_string(), None),
        LrSpec::Theory => {
            let meta = built
                .metadata
                .as_ref()
                .ok_or_else(|| Error::LearningRate("lr = theory needs problem metadata (optimum unavailable)".into()))?;
            let eta = theoretical_lr(&LrInputs {
                smoothness: meta.smoothness,
                sigma: meta.sigma,
                gstar: meta.gstar,
                b0: meta.b0,
                machines,
                local_steps,
                rounds,
            })?;
            (eta, "theory".to_string(), None)
        }
        LrSpec::Grid(values) => {
            let cfg = spec.run_config(machines, local_steps, values[0], 0);
            let cfg = crate::algorithms::RunConfig {
                record_diagnostics: false,
                ..cfg
            };
            let result = match &built.evaluation {
                Some((model, test)) => grid_search_with(&built.problem, algorithm, values, &cfg, &spec.seeds, |t| {
                    model.evaluate(&t.output, test).0
                })?,
                None => grid_search_with(&built.problem, algorithm, values, &cfg, &spec.seeds, Trajectory::final_excess_loss)?,
            };
            (result.best_eta, "grid".to_string(), Some(result))
        }
    };
    Ok(ResolvedEta {
        algorithm,
        machines,
        local_steps,
        rounds,
        eta,
        source,
        grid,
    })
}

#[allow(clippy::too_many_arguments)]
fn csv_rows(
    spec: &ExperimentSpec,
    id: &str,
    algorithm: Algorithm,
    machines: usize,
    local_steps: usize,
    rounds: usize,
    seed: u64,
    traj: &Trajectory,
) -> Vec<CsvRow> {
    traj.rounds
        .iter()
        .map(|rec| {
            let m = &rec.metrics;
            CsvRow {
                run_id: id.to_string(),
                algorithm: algorithm.to_string(),
                problem: spec.problem.to_string(),
                machines,
                local_steps,
                rounds,
                seed,
                round: m.round,
                t: m.t,
                eta: traj.eta,
                excess_loss: m.excess_loss,
                grad_norm: m.grad_norm,
                dispersion_q: m.dispersion_q,
                v_increment: m.v_increment,
                d_t: if m.d_t.is_nan() { None } else { Some(m.d_t) },
                diverged: m.diverged,
                wall_ms: m.wall_ms,
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    built: &BuiltProblem,
    id: &str,
    algorithm: Algorithm,
    machines: usize,
    local_steps: usize,
    rounds: usize,
    seed: u64,
    traj: &Trajectory,
) -> Option<EvalRow> {
    let (model, test) = built.evaluation.as_ref()?;
    let (test_loss, test_accuracy) = if traj.diverged {
        (f64::INFINITY, 0.0)
    } else {
        model.evaluate(&traj.output, test)
    };
    let train_loss = if traj.diverged {
        f64::INFINITY
    } else {
        use crate::objectives::Objective;
        model.global_value(&traj.output)
    };
    Some(EvalRow {
        run_id: id.to_string(),
        algorithm: algorithm.to_string(),
        machines,
        local_steps,
        rounds,
        seed,
        eta: traj.eta,
        train_loss,
        test_loss,
        test_accuracy,
    })
}
