//! Built-in verification suite: exact algebraic identities and invariants
//! checked on small deterministic instances.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::algorithms::{run_anytime_single, run_local, run_slowcal, Problem, RunConfig, Trajectory};
use crate::error::Result;
use crate::linalg;
use crate::metrics;
use crate::objectives::{
    check_growth_bound, self_bounding_slack, CurvatureKind, Objective, ProblemMetadata, QuadraticEnsemble, QuadraticSpec,
};
use crate::rng::domain_rng;
use crate::weights::WeightSchedule;

/// Outcome of one check: `value` is compared against `tolerance` in the
/// direction given by `kind`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub kind: Bound,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    /// `value <= tolerance`
    AtMost,
    /// `value >= tolerance`
    AtLeast,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            kind: Bound::AtMost,
            passed: value <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            kind: Bound::AtLeast,
            passed: value >= tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        write!(
            f,
            "[{}] {:<52} {:>12.3e} {op} {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub elapsed_ms: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{passed}/{} checks passed in {:.0} ms", self.checks.len(), self.elapsed_ms)
    }
}

fn ensemble(curvature: CurvatureKind, sigma: f64, seed: u64) -> Result<QuadraticEnsemble> {
    QuadraticSpec {
        dim: 8,
        machines: 4,
        curvature,
        eig_min: 0.05,
        eig_max: 1.0,
        center_norm: 2.0,
        center_spread: 1.0,
        gstar_target: Some(1.0),
        sigma,
        seed,
    }
    .build()
}

fn problem(curvature: CurvatureKind, sigma: f64, seed: u64) -> Result<Problem> {
    Problem::from_origin(Arc::new(ensemble(curvature, sigma, seed)?))
}

fn config(machines: usize, local_steps: usize, rounds: usize, eta: f64, schedule: WeightSchedule, diagnostics: bool) -> RunConfig {
    RunConfig {
        machines,
        local_steps,
        rounds,
        eta,
        schedule,
        seed: 7,
        record_diagnostics: diagnostics,
    }
}

/// `max_t ‖r_t‖ / max(1, max_t ‖g_t‖)` of the momentum form.
pub fn relative_momentum_residual(trajectory: &Trajectory, schedule: WeightSchedule) -> Result<f64> {
    let residual = metrics::momentum_residual(trajectory, schedule)?;
    let scale = trajectory
        .steps
        .iter()
        .map(|s| linalg::norm(&s.grad_mean))
        .fold(1.0, f64::max);
    Ok(residual / scale)
}

/// Largest relative difference between the anchors of two trajectories.
pub fn anchor_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
        for (u, v) in ra
            .anchor
            .w
            .iter()
            .zip(&rb.anchor.w)
            .chain(ra.anchor.x.iter().zip(&rb.anchor.x))
        {
            worst = worst.max((u - v).abs() / (1.0 + v.abs()));
        }
    }
    if a.rounds.len() != b.rounds.len() {
        return f64::INFINITY;
    }
    worst
}

/// Runs every check.
pub fn verify_suite() -> Result<VerifyReport> {
    let clock = Instant::now();
    let mut checks = Vec::new();
    let schedules = [
        ("uniform", WeightSchedule::Uniform),
        ("linear", WeightSchedule::Linear),
        ("poly:2", WeightSchedule::Polynomial(2.0)),
    ];

    // weighted-average structure of the server averages
    let noisy = problem(CurvatureKind::PerMachine, 1.0, 11)?;
    for (label, schedule) in schedules {
        let traj = run_slowcal(&noisy, &config(4, 8, 6, 1e-3, schedule, true))?;
        let r = metrics::weighted_average_residual(&traj, schedule)?;
        checks.push(Check::at_most(format!("weighted average, slowcal, {label}"), r, 1e-10));
        let single = run_anytime_single(&noisy, &config(1, 1, 100, 1e-3, schedule, true))?;
        let r = metrics::weighted_average_residual(&single, schedule)?;
        checks.push(Check::at_most(format!("weighted average, anytime, {label}"), r, 1e-10));
    }

    // momentum form of Anytime-SGD
    let exact = problem(CurvatureKind::PerMachine, 0.0, 12)?;
    for (label, schedule) in &schedules[..2] {
        let traj = run_anytime_single(&exact, &config(1, 1, 100, 0.01, *schedule, true))?;
        checks.push(Check::at_most(
            format!("momentum residual, sigma=0, {label}"),
            relative_momentum_residual(&traj, *schedule)?,
            1e-10,
        ));
        let traj = run_anytime_single(&noisy, &config(1, 1, 100, 1e-3, *schedule, true))?;
        checks.push(Check::at_most(
            format!("momentum residual, sigma=1, {label}"),
            relative_momentum_residual(&traj, *schedule)?,
            1e-10,
        ));
    }

    // reductions
    for (label, schedule) in &schedules[..2] {
        let s = run_slowcal(&exact, &config(4, 1, 60, 0.01, *schedule, false))?;
        let a = run_anytime_single(&exact, &config(1, 1, 60, 0.01, *schedule, false))?;
        checks.push(Check::at_most(
            format!("slowcal K=1 == anytime batch, {label}"),
            anchor_distance(&s, &a),
            1e-12,
        ));
    }
    checks.push(Check::at_most("local homogeneous == sequential GD", local_vs_gd()?, 0.0));

    // bias accumulator vanishes under shared curvature
    let shared = problem(CurvatureKind::Shared, 1.0, 13)?;
    for (name, traj) in [
        ("local", run_local(&shared, &config(4, 8, 5, 0.01, WeightSchedule::Linear, true), false)?),
        ("slowcal", run_slowcal(&shared, &config(4, 8, 5, 1e-3, WeightSchedule::Linear, true))?),
    ] {
        let worst = traj
            .steps
            .iter()
            .map(|s| s.v_increment / (1.0 + s.dispersion))
            .fold(0.0f64, f64::max);
        checks.push(Check::at_most(format!("shared curvature V == 0, {name}"), worst, 1e-12));
    }

    // dispersion resets after aggregation
    let traj = run_slowcal(&noisy, &config(4, 8, 6, 1e-3, WeightSchedule::Linear, true))?;
    let reset = (1..6)
        .map(|r| traj.steps[r * 8].dispersion)
        .fold(0.0f64, f64::max);
    checks.push(Check::at_most("dispersion zero after aggregation", reset, 0.0));

    // growth and self-bounding inequalities at random probes
    let q = ensemble(CurvatureKind::PerMachine, 0.0, 14)?;
    let meta = ProblemMetadata::compute(&q, &vec![0.0; q.dim()])?;
    let mut rng = domain_rng(14, "verify-probes");
    let (mut growth, mut bounding) = (f64::INFINITY, f64::INFINITY);
    for i in 0..100 {
        let radius = 10f64.powf(-2.0 + 4.0 * i as f64 / 99.0);
        let dir: Vec<f64> = (0..q.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let scale = radius / linalg::norm(&dir);
        let x: Vec<f64> = meta.optimum.iter().zip(&dir).map(|(o, d)| o + scale * d).collect();
        growth = growth.min(check_growth_bound(&q, &meta, &x).slack);
        bounding = bounding.min(self_bounding_slack(&q, &meta, &x));
    }
    checks.push(Check::at_least("growth bound slack (100 probes)", growth, -1e-9));
    checks.push(Check::at_least("self-bounding slack (100 probes)", bounding, -1e-9));

    // convergence certificate on deterministic Anytime runs
    let opt = exact.optimum.clone().expect("quadratic optimum");
    for (label, schedule) in &schedules[..2] {
        let traj = run_anytime_single(&exact, &config(1, 1, 200, 0.01, *schedule, true))?;
        let (lower, upper) = metrics::anytime_certificate(exact.objective.as_ref(), &traj, *schedule, &opt.point, opt.value)?;
        checks.push(Check::at_least(format!("anytime certificate lower, {label}"), lower, -1e-9));
        checks.push(Check::at_least(format!("anytime certificate upper, {label}"), upper, -1e-9));
    }

    Ok(VerifyReport {
        checks,
        elapsed_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

/// Largest deviation of noiseless homogeneous Local-SGD from `KR`
/// sequential gradient steps.
fn local_vs_gd() -> Result<f64> {
    let base = ensemble(CurvatureKind::Shared, 0.0, 15)?;
    let center = base.centers()[0].clone();
    let q = QuadraticEnsemble::new(
        crate::objectives::Curvature::Shared(base.curvature(0).clone()),
        vec![center; 4],
        0.0,
    )?;
    let p = Problem::from_origin(Arc::new(q))?;
    let traj = run_local(&p, &config(4, 5, 6, 0.1, WeightSchedule::Uniform, false), false)?;
    let objective = p.objective.as_ref();
    let mut x = p.start.clone();
    let mut worst = 0.0f64;
    for rec in &traj.rounds {
        for _ in 0..5 {
            let g = objective.exact_gradient(0, &x)?;
            linalg::axpy(-0.1, &g, &mut x);
        }
        for (a, b) in rec.anchor.x.iter().zip(&x) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
