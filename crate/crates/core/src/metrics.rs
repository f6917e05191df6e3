//! Runtime diagnostics tracked by the convergence analysis: excess loss,
//! query-point dispersion `Q_t`, gradient-bias increments of `V_t`, and the
//! momentum form of Anytime-SGD.

use serde::{Deserialize, Serialize};

use crate::algorithms::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dist_sq, norm_sq};
use crate::objectives::Objective;
use crate::weights::WeightSchedule;

/// One row of per-round output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    /// Global step at the end of the round, `(r + 1) K`.
    pub t: u64,
    pub excess_loss: f64,
    pub grad_norm: f64,
    /// `Q_t` of the query points at the end of the round, before aggregation.
    pub dispersion_q: f64,
    /// Sum of `α_τ² ‖ḡ_τ - ∇f(x̄_τ)‖²` over the round's steps.
    pub v_increment: f64,
    /// `‖w̄_t - w*‖²` after aggregation.
    pub d_t: f64,
    pub diverged: bool,
    pub wall_ms: f64,
}

/// `f(x) - f(w*)`.
pub fn excess_loss(objective: &dyn Objective, optimum_value: f64, x: &[f64]) -> f64 {
    objective.global_value(x) - optimum_value
}

/// `Q = (α² / M²) Σ_{i,j} ‖x^i - x^j‖²` over ordered pairs.
pub fn dispersion<P: AsRef<[f64]>>(points: &[P], alpha: f64) -> f64 {
    let m = points.len();
    if m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            total += dist_sq(a.as_ref(), b.as_ref());
        }
    }
    // each unordered pair appears twice in the ordered sum
    alpha * alpha * 2.0 * total / (m * m) as f64
}

/// `α² ‖(1/M) Σ_i ∇f_i(x^i) - ∇f(x̄)‖²` with `x̄` the machine average.
pub fn bias_increment<P: AsRef<[f64]>>(objective: &dyn Objective, points: &[P], alpha: f64) -> Result<f64> {
    let m = points.len();
    if m != objective.machines() {
        return Err(Error::Dimension {
            expected: objective.machines(),
            actual: m,
        });
    }
    let d = objective.dim();
    let mut g_bar = vec![0.0; d];
    for (i, p) in points.iter().enumerate() {
        axpy(1.0, &objective.exact_gradient(i, p.as_ref())?, &mut g_bar);
    }
    linalg::scale(1.0 / m as f64, &mut g_bar);
    let x_bar = linalg::mean(points.iter().map(|p| p.as_ref()), d);
    let g_at_mean = objective.global_gradient(&x_bar);
    Ok(alpha * alpha * dist_sq(&g_bar, &g_at_mean))
}

/// Largest `‖(x_{t+1} - x_t)/η + (1/α_{0:t+1}) Σ_{n<=t} α_{t+1} α_n (α_{0:n}/α_{0:t}) g_n‖`
/// along a single-machine Anytime trajectory recorded with diagnostics.
pub fn momentum_residual(trajectory: &Trajectory, schedule: WeightSchedule) -> Result<f64> {
    let steps = &trajectory.steps;
    if steps.is_empty() || steps.iter().any(|s| s.grad_mean.is_empty()) {
        return Err(Error::MissingGradients);
    }
    let eta = trajectory.eta;
    let d = steps[0].x_bar.len();
    let table = schedule.table(steps.len() as u64);
    // x_0..x_T: recorded pre-step points followed by the final output
    let mut xs: Vec<&[f64]> = steps.iter().map(|s| s.x_bar.as_slice()).collect();
    xs.push(&trajectory.output);

    // m_t = Σ_{n<=t} α_n α_{0:n} g_n, accumulated incrementally.
    let mut weighted = vec![0.0; d];
    let mut worst = 0.0f64;
    for (t, step) in steps.iter().enumerate() {
        let t = t as u64;
        axpy(table.weight(t) * table.prefix(t), &step.grad_mean, &mut weighted);
        let coeff = table.weight(t + 1) / (table.prefix(t + 1) * table.prefix(t));
        let mut r: Vec<f64> = xs[t as usize + 1]
            .iter()
            .zip(xs[t as usize])
            .map(|(next, cur)| (next - cur) / eta)
            .collect();
        axpy(coeff, &weighted, &mut r);
        worst = worst.max(linalg::norm(&r));
    }
    Ok(worst)
}

/// Certificate of the Anytime bound along recorded steps:
/// returns the smallest slack of `0 <= α_{0:t}(f(x_t) - f*)` and of
/// `α_{0:t}(f(x_t) - f*) <= Σ_{τ<=t} α_τ ∇f(x_τ)·(w_τ - w*)`.
pub fn anytime_certificate(
    objective: &dyn Objective,
    trajectory: &Trajectory,
    schedule: WeightSchedule,
    optimum: &[f64],
    optimum_value: f64,
) -> Result<(f64, f64)> {
    if trajectory.steps.is_empty() {
        return Err(Error::MissingGradients);
    }
    let table = schedule.table(trajectory.steps.len() as u64);
    let mut rhs = 0.0;
    let (mut lower, mut upper) = (f64::INFINITY, f64::INFINITY);
    for (t, step) in trajectory.steps.iter().enumerate() {
        let t = t as u64;
        let g = objective.global_gradient(&step.x_bar);
        let diff = linalg::sub(&step.w_bar, optimum);
        rhs += table.weight(t) * linalg::dot(&g, &diff);
        let lhs = table.prefix(t) * (objective.global_value(&step.x_bar) - optimum_value);
        lower = lower.min(lhs);
        upper = upper.min(rhs - lhs);
    }
    Ok((lower, upper))
}

/// Largest deviation of recorded server averages from
/// `x̄_{t+1} = (1 - γ_{t+1}) x̄_t + γ_{t+1} w̄_{t+1}`, relative to the iterate scale.
pub fn weighted_average_residual(trajectory: &Trajectory, schedule: WeightSchedule) -> Result<f64> {
    let steps = &trajectory.steps;
    if steps.is_empty() {
        return Err(Error::MissingGradients);
    }
    let table = schedule.table(steps.len() as u64);
    let final_anchor = &trajectory.final_anchor;
    let mut worst = 0.0f64;
    for t in 0..steps.len() {
        let (x_next, w_next) = match steps.get(t + 1) {
            Some(s) => (s.x_bar.as_slice(), s.w_bar.as_slice()),
            None => (final_anchor.x.as_slice(), final_anchor.w.as_slice()),
        };
        let gamma = table.gamma(t as u64);
        let scale = 1.0f64.max(norm_sq(w_next).sqrt()).max(norm_sq(&steps[t].x_bar).sqrt());
        let err = x_next
            .iter()
            .zip(&steps[t].x_bar)
            .zip(w_next)
            .map(|((xn, x), w)| (xn - ((1.0 - gamma) * x + gamma * w)).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

/// Mean of a metric over the final quarter of rounds (at least one round).
pub fn final_quarter_mean(rounds: &[RoundMetrics], metric: impl Fn(&RoundMetrics) -> f64) -> f64 {
    let n = rounds.len();
    let start = n - (n / 4).max(1);
    rounds[start..].iter().map(&metric).sum::<f64>() / (n - start) as f64
}
