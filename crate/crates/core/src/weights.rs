//! Step weights `α_t`, their prefix sums `α_{0:t}`, and the coefficient used
//! to fold a new iterate into a running weighted average.
//!
//! Steps are indexed from zero. Uniform and linear schedules use closed-form
//! prefix sums; other exponents use a Neumaier-compensated running sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The `α_t` family. `Uniform` is `α_t = 1`, `Linear` is `α_t = t + 1`,
/// `Polynomial(p)` is `α_t = (t + 1)^p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightSchedule {
    Uniform,
    Linear,
    Polynomial(f64),
}

impl WeightSchedule {
    pub fn polynomial(p: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::field("schedule", format!("exponent must be finite and >= 0, got {p}")));
        }
        Ok(WeightSchedule::Polynomial(p))
    }

    pub fn exponent(&self) -> f64 {
        match *self {
            WeightSchedule::Uniform => 0.0,
            WeightSchedule::Linear => 1.0,
            WeightSchedule::Polynomial(p) => p,
        }
    }

    /// Canonical form: polynomial exponents 0 and 1 collapse to the
    /// closed-form variants.
    fn canonical(&self) -> Self {
        match *self {
            WeightSchedule::Polynomial(p) if p == 0.0 => WeightSchedule::Uniform,
            WeightSchedule::Polynomial(p) if p == 1.0 => WeightSchedule::Linear,
            other => other,
        }
    }

    pub fn weight_at(&self, t: u64) -> f64 {
        match self.canonical() {
            WeightSchedule::Uniform => 1.0,
            WeightSchedule::Linear => (t + 1) as f64,
            WeightSchedule::Polynomial(p) => ((t + 1) as f64).powf(p),
        }
    }

    /// `α_{0:t} = Σ_{τ=0}^{t} α_τ`.
    pub fn prefix_weight(&self, t: u64) -> f64 {
        match self.canonical() {
            WeightSchedule::Uniform => (t + 1) as f64,
            WeightSchedule::Linear => linear_prefix(t),
            WeightSchedule::Polynomial(_) => {
                let mut acc = CompensatedSum::default();
                for tau in 0..=t {
                    acc.add(self.weight_at(tau));
                }
                acc.value()
            }
        }
    }

    /// `γ_{t+1} = α_{t+1} / α_{0:t+1}`; the caller forms
    /// `x_{t+1} = (1 - γ) x_t + γ w_{t+1}`.
    pub fn averaging_coeff(&self, t: u64) -> f64 {
        match self.canonical() {
            WeightSchedule::Uniform => 1.0 / (t + 2) as f64,
            WeightSchedule::Linear => 2.0 / (t + 3) as f64,
            WeightSchedule::Polynomial(_) => self.weight_at(t + 1) / self.prefix_weight(t + 1),
        }
    }

    /// Precomputes weights and prefix sums for steps `0..=last`.
    pub fn table(&self, last: u64) -> WeightTable {
        WeightTable::new(*self, last)
    }
}

fn linear_prefix(t: u64) -> f64 {
    // (t+1)(t+2)/2 in integer arithmetic; exact in f64 below 2^53.
    let (a, b) = (t as u128 + 1, t as u128 + 2);
    ((a * b) / 2) as f64
}

/// Neumaier's variant of Kahan summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Dense lookup of `α_t`, `α_{0:t}` for `t = 0..=last`.
#[derive(Clone, Debug)]
pub struct WeightTable {
    schedule: WeightSchedule,
    weights: Vec<f64>,
    prefix: Vec<f64>,
}

impl WeightTable {
    pub fn new(schedule: WeightSchedule, last: u64) -> Self {
        let n = last as usize + 1;
        let weights: Vec<f64> = (0..n as u64).map(|t| schedule.weight_at(t)).collect();
        let prefix = match schedule.canonical() {
            WeightSchedule::Polynomial(_) => {
                let mut acc = CompensatedSum::default();
                weights
                    .iter()
                    .map(|&w| {
                        acc.add(w);
                        acc.value()
                    })
                    .collect()
            }
            closed => (0..n as u64).map(|t| closed.prefix_weight(t)).collect(),
        };
        WeightTable {
            schedule,
            weights,
            prefix,
        }
    }

    pub fn schedule(&self) -> WeightSchedule {
        self.schedule
    }

    pub fn last(&self) -> u64 {
        self.weights.len() as u64 - 1
    }

    pub fn weight(&self, t: u64) -> f64 {
        self.weights[t as usize]
    }

    pub fn prefix(&self, t: u64) -> f64 {
        self.prefix[t as usize]
    }

    /// `γ_{t+1}`; requires `t + 1 <= last`.
    pub fn gamma(&self, t: u64) -> f64 {
        let next = t as usize + 1;
        self.weights[next] / self.prefix[next]
    }
}

impl fmt::Display for WeightSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSchedule::Uniform => f.write_str("uniform"),
            WeightSchedule::Linear => f.write_str("linear"),
            WeightSchedule::Polynomial(p) => write!(f, "poly:{p}"),
        }
    }
}

impl FromStr for WeightSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(WeightSchedule::Uniform),
            "linear" => Ok(WeightSchedule::Linear),
            other => {
                let p = other
                    .strip_prefix("poly:")
                    .ok_or_else(|| Error::field("schedule", format!("expected uniform | linear | poly:<p>, got `{other}`")))?;
                let p: f64 = p
                    .parse()
                    .map_err(|_| Error::field("schedule", format!("bad exponent `{p}`")))?;
                WeightSchedule::polynomial(p)
            }
        }
    }
}

impl Serialize for WeightSchedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightSchedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
