//! The parameter-server round template and its concrete methods.
//!
//! Every method follows the same cycle: the server distributes an anchor,
//! each machine performs `K` local stochastic-gradient computations, and the
//! server averages the machines' messages (ascending machine index) into the
//! next anchor. Global step `t = rK + k` indexes weights and samples.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, all_finite, axpy, dist_sq};
use crate::metrics::{self, RoundMetrics};
use crate::objectives::{Objective, Optimum};
use crate::rng::SampleKey;
use crate::weights::{WeightSchedule, WeightTable};

/// A problem instance: the objective, the start point `w_0 = x_0` and, when
/// known, the global optimum used for excess-loss reporting.
#[derive(Clone, Debug)]
pub struct Problem {
    pub objective: Arc<dyn Objective>,
    pub start: Vec<f64>,
    pub optimum: Option<Optimum>,
}

impl Problem {
    pub fn new(objective: Arc<dyn Objective>, start: Vec<f64>, optimum: Option<Optimum>) -> Result<Self> {
        if start.len() != objective.dim() {
            return Err(Error::Dimension {
                expected: objective.dim(),
                actual: start.len(),
            });
        }
        Ok(Problem {
            objective,
            start,
            optimum,
        })
    }

    /// Builds the problem from the zero vector, solving for the optimum.
    pub fn from_origin(objective: Arc<dyn Objective>) -> Result<Self> {
        let optimum = objective.optimum()?;
        let start = vec![0.0; objective.dim()];
        Self::new(objective, start, Some(optimum))
    }

    /// `f(w*)` when the optimum is known, else zero (the loss column then
    /// holds raw training loss).
    pub fn reference_value(&self) -> f64 {
        self.optimum.as_ref().map_or(0.0, |o| o.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Minibatch,
    Local,
    LocalWeighted,
    Anytime,
    Slowcal,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Minibatch,
        Algorithm::Local,
        Algorithm::LocalWeighted,
        Algorithm::Anytime,
        Algorithm::Slowcal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Minibatch => "minibatch",
            Algorithm::Local => "local",
            Algorithm::LocalWeighted => "local-weighted",
            Algorithm::Anytime => "anytime",
            Algorithm::Slowcal => "slowcal",
        }
    }

    pub fn run(&self, problem: &Problem, cfg: &RunConfig) -> Result<Trajectory> {
        match self {
            Algorithm::Minibatch => run_minibatch(problem, cfg),
            Algorithm::Local => run_local(problem, cfg, false),
            Algorithm::LocalWeighted => run_local(problem, cfg, true),
            Algorithm::Anytime => run_anytime_single(problem, cfg),
            Algorithm::Slowcal => run_slowcal(problem, cfg),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `M`
    pub machines: usize,
    /// `K`
    pub local_steps: usize,
    /// `R`
    pub rounds: usize,
    pub eta: f64,
    pub schedule: WeightSchedule,
    pub seed: u64,
    pub record_diagnostics: bool,
}

impl RunConfig {
    pub fn total_steps(&self) -> u64 {
        (self.local_steps * self.rounds) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.machines == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig(format!(
                "M, K, R must be >= 1 (got M={}, K={}, R={})",
                self.machines, self.local_steps, self.rounds
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive and finite, got {}", self.eta)));
        }
        Ok(())
    }

    fn validate_for(&self, objective: &dyn Objective) -> Result<()> {
        self.validate()?;
        if self.machines != objective.machines() {
            return Err(Error::InvalidConfig(format!(
                "config has M={} but the problem has {} machines",
                self.machines,
                objective.machines()
            )));
        }
        Ok(())
    }
}

/// `Θ_r = (w, x)`; methods with a single slot keep `x == w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerAnchor {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
}

/// Machine averages at global step `t`, before the step-`t` update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub w_bar: Vec<f64>,
    pub x_bar: Vec<f64>,
    /// Mean of the gradient estimates actually used at step `t`.
    pub grad_mean: Vec<f64>,
    pub dispersion: f64,
    pub v_increment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub anchor: ServerAnchor,
    pub metrics: RoundMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub rounds: Vec<RoundRecord>,
    /// Per-step records; empty unless diagnostics were requested.
    pub steps: Vec<StepRecord>,
    pub final_anchor: ServerAnchor,
    /// Minibatch: uniform anchor average. Local: last anchor. Weighted local:
    /// `α`-weighted average of machine-averaged iterates. Anytime and
    /// SLowcal: `x_T`.
    pub output: Vec<f64>,
    pub last_anchor_output: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn final_excess_loss(&self) -> f64 {
        self.rounds.last().map_or(f64::INFINITY, |r| r.metrics.excess_loss)
    }

    pub fn round_metrics(&self) -> Vec<RoundMetrics> {
        self.rounds.iter().map(|r| r.metrics.clone()).collect()
    }
}

/// A run is flagged as diverged once its excess loss exceeds this multiple
/// of `1 + |f(w_0) - f*|` or any iterate becomes non-finite.
pub const DIVERGENCE_FACTOR: f64 = 1e8;

/// Per-round bookkeeping shared by all methods.
struct Recorder<'a> {
    problem: &'a Problem,
    algorithm: Algorithm,
    eta: f64,
    local_steps: u64,
    rounds: Vec<RoundRecord>,
    steps: Vec<StepRecord>,
    diverged: bool,
    clock: Instant,
    /// Excess loss above which a run counts as diverged.
    blowup: f64,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, algorithm: Algorithm, cfg: &RunConfig) -> Self {
        Recorder {
            problem,
            algorithm,
            eta: cfg.eta,
            local_steps: cfg.local_steps as u64,
            rounds: Vec::with_capacity(cfg.rounds),
            steps: Vec::new(),
            diverged: false,
            clock: Instant::now(),
            blowup: DIVERGENCE_FACTOR * (1.0 + metrics::excess_loss(problem.objective.as_ref(), problem.reference_value(), &problem.start).abs()),
        }
    }

    /// Records round `r`. Returns `false` once the run has diverged.
    fn finish_round(&mut self, r: u64, anchor: &ServerAnchor, output: &[f64], dispersion_q: f64, v_increment: f64) -> bool {
        let wall_ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.clock = Instant::now();
        let t = (r + 1) * self.local_steps;
        let objective = self.problem.objective.as_ref();
        let finite = all_finite(&anchor.w) && all_finite(&anchor.x) && all_finite(output);
        let excess = if finite {
            metrics::excess_loss(objective, self.problem.reference_value(), output)
        } else {
            f64::INFINITY
        };
        if !finite || !excess.is_finite() || excess > self.blowup {
            self.diverged = true;
        }
        let metrics = if self.diverged {
            RoundMetrics {
                round: r,
                t,
                excess_loss: f64::INFINITY,
                grad_norm: f64::INFINITY,
                dispersion_q: f64::INFINITY,
                v_increment: f64::INFINITY,
                d_t: f64::INFINITY,
                diverged: true,
                wall_ms,
            }
        } else {
            RoundMetrics {
                round: r,
                t,
                excess_loss: excess,
                grad_norm: linalg::norm(&objective.global_gradient(output)),
                dispersion_q,
                v_increment,
                d_t: self
                    .problem
                    .optimum
                    .as_ref()
                    .map_or(f64::NAN, |o| dist_sq(&anchor.w, &o.point)),
                diverged: false,
                wall_ms,
            }
        };
        self.rounds.push(RoundRecord {
            anchor: anchor.clone(),
            metrics,
        });
        !self.diverged
    }

    /// Fills the remaining rounds after divergence.
    fn pad_diverged(&mut self, from: u64, total: u64, anchor: &ServerAnchor) {
        for r in from..total {
            let t = (r + 1) * self.local_steps;
            self.rounds.push(RoundRecord {
                anchor: anchor.clone(),
                metrics: RoundMetrics {
                    round: r,
                    t,
                    excess_loss: f64::INFINITY,
                    grad_norm: f64::INFINITY,
                    dispersion_q: f64::INFINITY,
                    v_increment: f64::INFINITY,
                    d_t: f64::INFINITY,
                    diverged: true,
                    wall_ms: 0.0,
                },
            });
        }
    }

    fn finish(self, final_anchor: ServerAnchor, output: Vec<f64>, last_anchor_output: Vec<f64>) -> Trajectory {
        Trajectory {
            algorithm: self.algorithm,
            eta: self.eta,
            rounds: self.rounds,
            steps: self.steps,
            final_anchor,
            output,
            last_anchor_output,
            diverged: self.diverged,
        }
    }
}

/// Local state `(w^i, x^i)` of one machine within a round.
#[derive(Clone, Debug)]
struct WorkerState {
    machine: usize,
    w: Vec<f64>,
    x: Vec<f64>,
    /// `Σ α_{t+1} w_{t+1}^i` over the round (weighted Local-SGD output).
    weighted_sum: Vec<f64>,
    last_grad: Vec<f64>,
}

impl WorkerState {
    fn at_anchor(machine: usize, anchor: &ServerAnchor) -> Self {
        WorkerState {
            machine,
            w: anchor.w.clone(),
            x: anchor.x.clone(),
            weighted_sum: vec![0.0; anchor.w.len()],
            last_grad: Vec::new(),
        }
    }
}

fn mean_of<F>(workers: &[WorkerState], dim: usize, slot: F) -> Vec<f64>
where
    F: Fn(&WorkerState) -> &[f64],
{
    linalg::mean(workers.iter().map(slot), dim)
}

/// Applies `step` to every worker for local steps `0..K`. With diagnostics
/// the machines advance in lock-step so per-step averages can be recorded;
/// otherwise each machine runs its whole round independently (in parallel).
/// Both paths perform identical arithmetic per machine.
fn run_round<S>(
    rec: &mut Recorder<'_>,
    workers: &mut [WorkerState],
    cfg: &RunConfig,
    table: &WeightTable,
    round: u64,
    step: S,
) -> Result<()>
where
    S: Fn(&mut WorkerState, u64, u64) -> Result<()> + Sync,
{
    let k_steps = cfg.local_steps as u64;
    if cfg.record_diagnostics {
        let objective = rec.problem.objective.as_ref();
        let dim = objective.dim();
        for k in 0..k_steps {
            let t = round * k_steps + k;
            let queries: Vec<&[f64]> = workers.iter().map(|w| w.x.as_slice()).collect();
            let dispersion = metrics::dispersion(&queries, table.weight(t));
            let v_increment = metrics::bias_increment(objective, &queries, table.weight(t))?;
            let (w_bar, x_bar) = (mean_of(workers, dim, |w| &w.w), mean_of(workers, dim, |w| &w.x));
            for worker in workers.iter_mut() {
                step(worker, round, k)?;
            }
            rec.steps.push(StepRecord {
                t,
                w_bar,
                x_bar,
                grad_mean: mean_of(workers, dim, |w| &w.last_grad),
                dispersion,
                v_increment,
            });
        }
        Ok(())
    } else {
        workers.par_iter_mut().try_for_each(|worker| {
            for k in 0..k_steps {
                step(worker, round, k)?;
            }
            Ok(())
        })
    }
}

fn round_diagnostics(rec: &Recorder<'_>, workers: &[WorkerState], table: &WeightTable, cfg: &RunConfig, round: u64) -> Result<(f64, f64)> {
    if !cfg.record_diagnostics {
        return Ok((0.0, 0.0));
    }
    let k_steps = cfg.local_steps as u64;
    let t_end = (round + 1) * k_steps;
    let queries: Vec<&[f64]> = workers.iter().map(|w| w.x.as_slice()).collect();
    let q_end = metrics::dispersion(&queries, table.weight(t_end));
    let v_round: f64 = rec.steps[rec.steps.len() - k_steps as usize..]
        .iter()
        .map(|s| s.v_increment)
        .sum();
    Ok((q_end, v_round))
}

/// Minibatch-SGD: `x_{r+1} = x_r - η (1/M) Σ_i (1/K) Σ_k ∇f_i(x_r, z)`.
/// Output is the uniform average of the anchors `x_1..x_R`; the last anchor
/// is kept in `last_anchor_output`.
pub fn run_minibatch(problem: &Problem, cfg: &RunConfig) -> Result<Trajectory> {
    let objective = problem.objective.as_ref();
    cfg.validate_for(objective)?;
    let dim = objective.dim();
    let mut rec = Recorder::new(problem, Algorithm::Minibatch, cfg);
    let mut x = problem.start.clone();
    let mut average = vec![0.0; dim];
    let k_steps = cfg.local_steps;
    for r in 0..cfg.rounds as u64 {
        let compute = |i: usize| -> Result<Vec<f64>> {
            let mut g = vec![0.0; dim];
            for k in 0..k_steps as u64 {
                let gi = objective.stochastic_gradient(i, &x, SampleKey::new(cfg.seed, i, r, k))?;
                axpy(1.0, &gi, &mut g);
            }
            linalg::scale(1.0 / k_steps as f64, &mut g);
            Ok(g)
        };
        let messages: Vec<Vec<f64>> = if cfg.record_diagnostics {
            (0..cfg.machines).map(compute).collect::<Result<_>>()?
        } else {
            (0..cfg.machines).into_par_iter().map(compute).collect::<Result<_>>()?
        };
        let g_bar = linalg::mean(messages.iter().map(Vec::as_slice), dim);
        if cfg.record_diagnostics {
            rec.steps.push(StepRecord {
                t: r * k_steps as u64,
                w_bar: x.clone(),
                x_bar: x.clone(),
                grad_mean: g_bar.clone(),
                dispersion: 0.0,
                v_increment: 0.0,
            });
        }
        axpy(-cfg.eta, &g_bar, &mut x);
        // running mean of x_1..x_{r+1}
        let n = (r + 1) as f64;
        for (a, xi) in average.iter_mut().zip(&x) {
            *a += (xi - *a) / n;
        }
        let anchor = ServerAnchor { w: x.clone(), x: x.clone() };
        if !rec.finish_round(r, &anchor, &average, 0.0, 0.0) {
            rec.pad_diverged(r + 1, cfg.rounds as u64, &anchor);
            break;
        }
    }
    let anchor = ServerAnchor { w: x.clone(), x: x.clone() };
    Ok(rec.finish(anchor, average, x))
}

/// Local-SGD. Plain: `x^i ← x^i - η ∇f_i(x^i, z)`. Weighted:
/// `x^i ← x^i - η α_t ∇f_i(x^i, z)` with output
/// `(1/α_{0:T}) Σ_t α_t w̄_t` over machine-averaged iterates.
pub fn run_local(problem: &Problem, cfg: &RunConfig, weighted: bool) -> Result<Trajectory> {
    let objective = problem.objective.as_ref();
    cfg.validate_for(objective)?;
    let dim = objective.dim();
    let algorithm = if weighted { Algorithm::LocalWeighted } else { Algorithm::Local };
    let mut rec = Recorder::new(problem, algorithm, cfg);
    let table = cfg.schedule.table(cfg.total_steps());
    let mut anchor = ServerAnchor {
        w: problem.start.clone(),
        x: problem.start.clone(),
    };
    // Σ_t α_t w̄_t, seeded with t = 0
    let mut weighted_acc: Vec<f64> = problem.start.iter().map(|v| v * table.weight(0)).collect();
    let step = |worker: &mut WorkerState, r: u64, k: u64| -> Result<()> {
        let t = r * cfg.local_steps as u64 + k;
        let g = objective.stochastic_gradient(worker.machine, &worker.x, SampleKey::new(cfg.seed, worker.machine, r, k))?;
        let scale = if weighted { cfg.eta * table.weight(t) } else { cfg.eta };
        axpy(-scale, &g, &mut worker.x);
        worker.w.copy_from_slice(&worker.x);
        if weighted {
            axpy(table.weight(t + 1), &worker.x, &mut worker.weighted_sum);
        }
        worker.last_grad = g;
        Ok(())
    };
    let mut output = anchor.x.clone();
    for r in 0..cfg.rounds as u64 {
        let mut workers: Vec<WorkerState> = (0..cfg.machines).map(|i| WorkerState::at_anchor(i, &anchor)).collect();
        run_round(&mut rec, &mut workers, cfg, &table, r, step)?;
        let (q_end, v_round) = round_diagnostics(&rec, &workers, &table, cfg, r)?;
        let x = mean_of(&workers, dim, |w| &w.x);
        anchor = ServerAnchor { w: x.clone(), x };
        output = if weighted {
            axpy(1.0, &mean_of(&workers, dim, |w| &w.weighted_sum), &mut weighted_acc);
            let norm = table.prefix((r + 1) * cfg.local_steps as u64);
            weighted_acc.iter().map(|v| v / norm).collect()
        } else {
            anchor.x.clone()
        };
        if !rec.finish_round(r, &anchor, &output, q_end, v_round) {
            rec.pad_diverged(r + 1, cfg.rounds as u64, &anchor);
            break;
        }
    }
    let last = anchor.x.clone();
    Ok(rec.finish(anchor, output, last))
}

/// Single-machine Anytime-SGD: `w_{t+1} = w_t - η α_t g_t` with `g_t`
/// queried at `x_t`, and `x_{t+1} = (1 - γ_{t+1}) x_t + γ_{t+1} w_{t+1}`.
///
/// Requires `cfg.machines == 1`. When the problem has several machines the
/// single worker queries the batch gradient `(1/M) Σ_i ∇f_i(x, z^i)`.
/// Rounds of `K` steps are only a recording granularity.
pub fn run_anytime_single(problem: &Problem, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.machines != 1 {
        return Err(Error::InvalidConfig(format!("anytime runs on a single machine, got M={}", cfg.machines)));
    }
    let objective = problem.objective.as_ref();
    let (dim, sources) = (objective.dim(), objective.machines());
    let table = cfg.schedule.table(cfg.total_steps());
    let mut rec = Recorder::new(problem, Algorithm::Anytime, cfg);
    let mut w = problem.start.clone();
    let mut x = problem.start.clone();
    let k_steps = cfg.local_steps as u64;
    for r in 0..cfg.rounds as u64 {
        for k in 0..k_steps {
            let t = r * k_steps + k;
            let mut g = vec![0.0; dim];
            for i in 0..sources {
                axpy(1.0, &objective.stochastic_gradient(i, &x, SampleKey::new(cfg.seed, i, r, k))?, &mut g);
            }
            linalg::scale(1.0 / sources as f64, &mut g);
            if cfg.record_diagnostics {
                rec.steps.push(StepRecord {
                    t,
                    w_bar: w.clone(),
                    x_bar: x.clone(),
                    grad_mean: g.clone(),
                    dispersion: 0.0,
                    v_increment: 0.0,
                });
            }
            axpy(-cfg.eta * table.weight(t), &g, &mut w);
            let gamma = table.gamma(t);
            for (xi, wi) in x.iter_mut().zip(&w) {
                *xi = (1.0 - gamma) * *xi + gamma * wi;
            }
        }
        let anchor = ServerAnchor { w: w.clone(), x: x.clone() };
        if !rec.finish_round(r, &anchor, &x, 0.0, 0.0) {
            rec.pad_diverged(r + 1, cfg.rounds as u64, &anchor);
            break;
        }
    }
    let anchor = ServerAnchor { w, x: x.clone() };
    Ok(rec.finish(anchor, x.clone(), x))
}

/// SLowcal-SGD: local Anytime-SGD steps on every machine with the anchor
/// pair `(w, x)` averaged at round boundaries. Outputs `x_T`.
pub fn run_slowcal(problem: &Problem, cfg: &RunConfig) -> Result<Trajectory> {
    let objective = problem.objective.as_ref();
    cfg.validate_for(objective)?;
    let dim = objective.dim();
    let table = cfg.schedule.table(cfg.total_steps());
    let mut rec = Recorder::new(problem, Algorithm::Slowcal, cfg);
    let mut anchor = ServerAnchor {
        w: problem.start.clone(),
        x: problem.start.clone(),
    };
    let step = |worker: &mut WorkerState, r: u64, k: u64| -> Result<()> {
        let t = r * cfg.local_steps as u64 + k;
        let g = objective.stochastic_gradient(worker.machine, &worker.x, SampleKey::new(cfg.seed, worker.machine, r, k))?;
        axpy(-cfg.eta * table.weight(t), &g, &mut worker.w);
        let gamma = table.gamma(t);
        for (xi, wi) in worker.x.iter_mut().zip(&worker.w) {
            *xi = (1.0 - gamma) * *xi + gamma * wi;
        }
        worker.last_grad = g;
        Ok(())
    };
    for r in 0..cfg.rounds as u64 {
        let mut workers: Vec<WorkerState> = (0..cfg.machines).map(|i| WorkerState::at_anchor(i, &anchor)).collect();
        run_round(&mut rec, &mut workers, cfg, &table, r, step)?;
        let (q_end, v_round) = round_diagnostics(&rec, &workers, &table, cfg, r)?;
        anchor = ServerAnchor {
            w: mean_of(&workers, dim, |w| &w.w),
            x: mean_of(&workers, dim, |w| &w.x),
        };
        let output = anchor.x.clone();
        if !rec.finish_round(r, &anchor, &output, q_end, v_round) {
            rec.pad_diverged(r + 1, cfg.rounds as u64, &anchor);
            break;
        }
    }
    let output = anchor.x.clone();
    Ok(rec.finish(anchor, output.clone(), output))
}
