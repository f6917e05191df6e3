//! Step-size selection: the theoretical learning rate for SLowcal-SGD,
//! empirical grid search, and the round counts needed for linear speedup.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, Problem, RunConfig, Trajectory};
use crate::error::{Error, Result};

/// Inputs of the theoretical learning rate. `b0 = ‖w_0 - w*‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrInputs {
    pub smoothness: f64,
    pub sigma: f64,
    pub gstar: f64,
    pub b0: f64,
    pub machines: usize,
    pub local_steps: usize,
    pub rounds: usize,
}

impl LrInputs {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("L", self.smoothness),
            ("sigma", self.sigma),
            ("gstar", self.gstar),
            ("b0", self.b0),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::field(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        for (name, v) in [("M", self.machines), ("K", self.local_steps), ("R", self.rounds)] {
            if v == 0 {
                return Err(Error::field(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// The five candidate step sizes; `+∞` where a denominator factor vanishes.
    pub fn caps(&self) -> Result<[f64; 5]> {
        self.validate()?;
        let l = self.smoothness;
        let m = self.machines as f64;
        let k = self.local_steps as f64;
        let r = self.rounds as f64;
        let t = k * r;
        let guard = |den: f64, num: f64| if den > 0.0 { num / den } else { f64::INFINITY };
        Ok([
            guard(48.0 * l * (t + 1.0), 1.0),
            guard(10.0 * l * k * k, 1.0),
            guard(40.0 * l * k * (t + 1.0).powf(2.0 / 3.0), 1.0),
            guard(self.sigma * t.powf(1.5), self.b0 * m.sqrt()),
            guard(
                l.sqrt() * k.powf(1.75) * r * (self.sigma.sqrt() + self.gstar.sqrt()),
                self.b0.sqrt(),
            ),
        ])
    }
}

/// Smallest of the five caps. Errors when `L = 0`.
pub fn theoretical_lr(inputs: &LrInputs) -> Result<f64> {
    if inputs.smoothness == 0.0 {
        return Err(Error::LearningRate("smoothness L = 0 leaves every cap infinite".into()));
    }
    let eta = inputs.caps()?.into_iter().fold(f64::INFINITY, f64::min);
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::LearningRate(format!("degenerate step size {eta}")));
    }
    Ok(eta)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// Mean score of each grid point over the seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub eta: f64,
    /// `+∞` when any seed diverged.
    pub score: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_eta: f64,
    pub table: Vec<GridScore>,
}

/// Grid search scored by mean final excess loss.
pub fn grid_search(problem: &Problem, algorithm: Algorithm, grid: &[f64], cfg: &RunConfig, seeds: &[u64]) -> Result<GridResult> {
    grid_search_with(problem, algorithm, grid, cfg, seeds, |t| t.final_excess_loss())
}

/// Grid search with a custom per-run score (lower is better). Diverged
/// runs and non-finite scores count as `+∞`; ties go to the smaller `η`.
pub fn grid_search_with<S>(problem: &Problem, algorithm: Algorithm, grid: &[f64], cfg: &RunConfig, seeds: &[u64], score: S) -> Result<GridResult>
where
    S: Fn(&Trajectory) -> f64 + Sync,
{
    if grid.is_empty() {
        return Err(Error::field("grid", "empty learning-rate grid"));
    }
    if seeds.is_empty() {
        return Err(Error::field("seeds", "empty seed list"));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..seeds.len()).map(move |s| (g, s))).collect();
    let runs: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, s)| {
            let run_cfg = RunConfig {
                eta: grid[g],
                seed: seeds[s],
                ..cfg.clone()
            };
            let traj = algorithm.run(problem, &run_cfg)?;
            let value = if traj.diverged { f64::INFINITY } else { score(&traj) };
            Ok(if value.is_finite() { value } else { f64::INFINITY })
        })
        .collect::<Result<_>>()?;

    let table: Vec<GridScore> = grid
        .iter()
        .enumerate()
        .map(|(g, &eta)| {
            let per_seed = runs[g * seeds.len()..(g + 1) * seeds.len()].to_vec();
            let score = per_seed.iter().sum::<f64>() / seeds.len() as f64;
            GridScore { eta, score, per_seed }
        })
        .collect();

    let best = table
        .iter()
        .filter(|row| row.score.is_finite())
        .min_by(|a, b| a.score.total_cmp(&b.score).then(a.eta.total_cmp(&b.eta)));
    match best {
        Some(row) => Ok(GridResult {
            best_eta: row.eta,
            table,
        }),
        None => Err(Error::AllDiverged { grid: grid.to_vec() }),
    }
}

/// Methods with a row in the round-complexity comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMethod {
    Minibatch,
    AcceleratedMinibatch,
    Local,
    Slowcal,
}

impl FromStr for RateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minibatch" => Ok(RateMethod::Minibatch),
            "accelerated-minibatch" | "accelerated" => Ok(RateMethod::AcceleratedMinibatch),
            "local" => Ok(RateMethod::Local),
            "slowcal" => Ok(RateMethod::Slowcal),
            _ => Err(Error::UnknownMethod(s.to_string())),
        }
    }
}

impl fmt::Display for RateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateMethod::Minibatch => "minibatch",
            RateMethod::AcceleratedMinibatch => "accelerated-minibatch",
            RateMethod::Local => "local",
            RateMethod::Slowcal => "slowcal",
        })
    }
}

/// Rounds needed for the `σ/√(MKR)` term to dominate, with `σ = 1` and all
/// constants set to 1. `g` is `G` for Local-SGD and `G_*` for SLowcal-SGD.
/// Asymptotic; meaningful for ordering only.
pub fn rmin(method: RateMethod, machines: usize, local_steps: usize, g: f64) -> Result<f64> {
    if machines == 0 || local_steps == 0 {
        return Err(Error::InvalidConfig("M and K must be at least 1".into()));
    }
    let m = machines as f64;
    let k = local_steps as f64;
    Ok(match method {
        RateMethod::Minibatch => m * k,
        RateMethod::AcceleratedMinibatch => (m * k).cbrt(),
        RateMethod::Local => g.powi(4) * (m * k).powi(3) + m.powi(3) * k,
        RateMethod::Slowcal => g * m * k.sqrt() + m * k.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> LrInputs {
        LrInputs {
            smoothness: 1.0,
            sigma: 1.0,
            gstar: 1.0,
            b0: 1.0,
            machines: 4,
            local_steps: 4,
            rounds: 10,
        }
    }

    #[test]
    fn worked_example() {
        // independent evaluation of each cap at T = 40
        let expect = [
            1.0 / 1968.0,
            1.0 / 160.0,
            1.0 / (160.0 * 41f64.powf(2.0 / 3.0)),
            2.0 / 40f64.powf(1.5),
            1.0 / (2.0 * 4f64.powf(1.75) * 10.0),
        ];
        let caps = base().caps().unwrap();
        for (c, e) in caps.iter().zip(expect) {
            assert!((c - e).abs() <= 1e-15 * e, "{c} vs {e}");
        }
        let eta = theoretical_lr(&base()).unwrap();
        assert!((eta - 1.0 / 1968.0).abs() < 1e-18);
    }

    #[test]
    fn zero_noise_uses_first_three_caps() {
        let inputs = LrInputs {
            sigma: 0.0,
            gstar: 0.0,
            ..base()
        };
        let caps = inputs.caps().unwrap();
        assert!(caps[3].is_infinite() && caps[4].is_infinite());
        let eta = theoretical_lr(&inputs).unwrap();
        assert_eq!(eta, caps[..3].iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn zero_smoothness_is_an_error() {
        let inputs = LrInputs { smoothness: 0.0, ..base() };
        assert!(theoretical_lr(&inputs).is_err());
    }

    #[test]
    fn rmin_examples() {
        assert_eq!(rmin(RateMethod::Minibatch, 8, 16, 0.0).unwrap(), 128.0);
        assert_eq!(rmin(RateMethod::Slowcal, 8, 16, 1.0).unwrap(), 64.0);
        assert_eq!(rmin(RateMethod::Local, 2, 2, 0.0).unwrap(), 16.0);
        assert!((rmin(RateMethod::AcceleratedMinibatch, 2, 4, 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!("fedprox".parse::<RateMethod>().is_err());
        assert_eq!("slowcal".parse::<RateMethod>().unwrap(), RateMethod::Slowcal);
    }

    #[test]
    fn slowcal_needs_fewer_rounds_on_sweep() {
        for m in 2..=64 {
            for k in 16..=256 {
                for g in [0.0, 1.0] {
                    let s = rmin(RateMethod::Slowcal, m, k, g).unwrap();
                    let mb = rmin(RateMethod::Minibatch, m, k, 0.0).unwrap();
                    assert!(s < mb, "M={m} K={k} G*={g}");
                }
            }
        }
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e-1, 7);
        assert_eq!(g.len(), 7);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[6] - 1e-1).abs() < 1e-15);
        assert!((g[3] - 1e-2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn eta_respects_every_cap(
            l in 0.01f64..100.0, sigma in 0.0f64..10.0, gstar in 0.0f64..10.0, b0 in 0.0f64..10.0,
            m in 1usize..128, k in 1usize..256, r in 1usize..500,
        ) {
            let inputs = LrInputs { smoothness: l, sigma, gstar, b0, machines: m, local_steps: k, rounds: r };
            let Ok(eta) = theoretical_lr(&inputs) else { return Ok(()); };
            let (lf, kf, t) = (l, k as f64, (k * r) as f64);
            let slack = 1.0 + 1e-12;
            prop_assert!(eta * 48.0 * lf * (t + 1.0) <= slack);
            prop_assert!(eta * 10.0 * lf * kf * kf <= slack);
            prop_assert!(eta * 40.0 * lf * kf * (t + 1.0).powf(2.0 / 3.0) <= slack);
            prop_assert!(eta * sigma * t.powf(1.5) <= b0 * (m as f64).sqrt() * slack);
            prop_assert!(eta * lf.sqrt() * kf.powf(1.75) * r as f64 * (sigma.sqrt() + gstar.sqrt()) <= b0.sqrt() * slack);
        }

        #[test]
        fn eta_nonincreasing_in_rounds(
            l in 0.01f64..100.0, sigma in 0.0f64..10.0, gstar in 0.0f64..10.0, b0 in 0.01f64..10.0,
            m in 1usize..64, k in 1usize..64, r in 1usize..500,
        ) {
            let a = LrInputs { smoothness: l, sigma, gstar, b0, machines: m, local_steps: k, rounds: r };
            let b = LrInputs { rounds: r + 1, ..a };
            prop_assert!(theoretical_lr(&b).unwrap() <= theoretical_lr(&a).unwrap());
        }
    }
}
