//! Declarative experiment configuration (flat-keyed TOML) and problem
//! construction from it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::algorithms::{Algorithm, Problem, RunConfig};
use crate::data::{self, dirichlet_partition, ClusterSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::objectives::{CurvatureKind, LogisticEnsemble, Objective, ProblemMetadata, QuadraticSpec};
use crate::weights::WeightSchedule;

/// Problem family named by the `problem` key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Quadratic,
    /// Multinomial logistic regression on synthetic Gaussian clusters.
    Logistic,
    MnistLogistic,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Logistic => "logistic",
            ProblemKind::MnistLogistic => "mnist-logistic",
        })
    }
}

/// `theory | fixed:<v> | grid:[v1,v2,...]`
#[derive(Clone, Debug, PartialEq)]
pub enum LrSpec {
    Theory,
    Fixed(f64),
    Grid(Vec<f64>),
}

impl FromStr for LrSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: String| Error::field("lr", msg);
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if s == "theory" {
            return Ok(LrSpec::Theory);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let v: f64 = v.trim().parse().map_err(|_| bad(format!("cannot parse `{v}` as a number")))?;
            if !positive(v) {
                return Err(bad(format!("step size must be positive, got {v}")));
            }
            return Ok(LrSpec::Fixed(v));
        }
        if let Some(body) = s.strip_prefix("grid:") {
            let inner = body
                .trim()
                .strip_prefix('[')
                .and_then(|b| b.strip_suffix(']'))
                .ok_or_else(|| bad(format!("grid must be bracketed, got `{body}`")))?;
            let values = inner
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("cannot parse `{v}` as a number"))))
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(bad("empty grid".into()));
            }
            if let Some(v) = values.iter().find(|v| !positive(**v)) {
                return Err(bad(format!("grid values must be positive, got {v}")));
            }
            return Ok(LrSpec::Grid(values));
        }
        Err(bad(format!("expected theory | fixed:<v> | grid:[...], got `{s}`")))
    }
}

impl fmt::Display for LrSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSpec::Theory => f.write_str("theory"),
            LrSpec::Fixed(v) => write!(f, "fixed:{v}"),
            LrSpec::Grid(vs) => {
                let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                write!(f, "grid:[{}]", parts.join(","))
            }
        }
    }
}

impl Serialize for LrSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LrSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

/// A run or sweep. Scalar keys may be given as lists where noted; the
/// cartesian product of `algorithm x M x K` is run for every seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    #[serde(deserialize_with = "one_or_many")]
    pub algorithm: Vec<Algorithm>,
    pub schedule: WeightSchedule,
    #[serde(rename = "M", deserialize_with = "one_or_many")]
    pub machines: Vec<usize>,
    #[serde(rename = "K", deserialize_with = "one_or_many")]
    pub local_steps: Vec<usize>,
    #[serde(rename = "R")]
    pub rounds: usize,
    /// When set, `R = total_steps / K` for each `K` (equal samples across `K`).
    pub total_steps: Option<usize>,
    pub lr: LrSpec,
    #[serde(deserialize_with = "one_or_many")]
    pub seeds: Vec<u64>,
    pub diagnostics: bool,
    pub out_dir: PathBuf,
    /// Seed of the problem instance (curvatures, centers, data, partition).
    pub problem_seed: u64,

    // quadratic ensembles
    pub d: usize,
    pub curvature: CurvatureKind,
    pub eig_min: f64,
    pub eig_max: f64,
    pub center_norm: f64,
    pub center_spread: f64,
    pub gstar: Option<f64>,
    pub sigma: f64,

    // classification
    pub classes: usize,
    pub spread: f64,
    pub skew: f64,
    pub examples_per_machine: usize,
    pub lambda: f64,
    pub dirichlet_alpha: f64,
    pub data_dir: Option<PathBuf>,
    /// Use only the first `n` training examples (0 = all).
    pub train_limit: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            problem: ProblemKind::Quadratic,
            algorithm: vec![Algorithm::Slowcal],
            schedule: WeightSchedule::Linear,
            machines: vec![8],
            local_steps: vec![16],
            rounds: 50,
            total_steps: None,
            lr: LrSpec::Theory,
            seeds: vec![0],
            diagnostics: false,
            out_dir: PathBuf::from("out"),
            problem_seed: 1,
            d: 20,
            curvature: CurvatureKind::PerMachine,
            eig_min: 1e-3,
            eig_max: 1.0,
            center_norm: 10.0,
            center_spread: 1.0,
            gstar: Some(2.0),
            sigma: 1.0,
            classes: 4,
            spread: 0.2,
            skew: 1.0,
            examples_per_machine: 200,
            lambda: 1e-4,
            dirichlet_alpha: 0.1,
            data_dir: None,
            train_limit: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::field(name, "list must not be empty"))
            } else {
                Ok(())
            }
        };
        nonempty("algorithm", self.algorithm.len())?;
        nonempty("M", self.machines.len())?;
        nonempty("K", self.local_steps.len())?;
        nonempty("seeds", self.seeds.len())?;
        if self.machines.contains(&0) {
            return Err(Error::field("M", "must be at least 1"));
        }
        if self.local_steps.contains(&0) {
            return Err(Error::field("K", "must be at least 1"));
        }
        if self.total_steps.is_none() && self.rounds == 0 {
            return Err(Error::field("R", "must be at least 1"));
        }
        if let Some(total) = self.total_steps {
            if let Some(k) = self.local_steps.iter().find(|&&k| total % k != 0 || total < k) {
                return Err(Error::field("total_steps", format!("must be a positive multiple of every K (K={k})")));
            }
        }
        if self.algorithm.contains(&Algorithm::Anytime) && self.machines.iter().any(|&m| m != 1) {
            return Err(Error::field("algorithm", "anytime runs on a single machine; set M = 1"));
        }
        match self.problem {
            ProblemKind::Quadratic => {
                if self.d == 0 {
                    return Err(Error::field("d", "must be at least 1"));
                }
                if !(self.eig_min > 0.0 && self.eig_max >= self.eig_min) {
                    return Err(Error::field("eig_min", "need 0 < eig_min <= eig_max"));
                }
                if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
                    return Err(Error::field("sigma", "must be finite and >= 0"));
                }
            }
            ProblemKind::Logistic | ProblemKind::MnistLogistic => {
                if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                    return Err(Error::field("lambda", "must be finite and >= 0"));
                }
                if self.problem == ProblemKind::Logistic && self.classes < 2 {
                    return Err(Error::field("classes", "need at least 2 classes"));
                }
                if self.problem == ProblemKind::MnistLogistic && !(self.dirichlet_alpha > 0.0) {
                    return Err(Error::field("dirichlet_alpha", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Rounds used with `K` local steps.
    pub fn rounds_for(&self, local_steps: usize) -> usize {
        self.total_steps.map_or(self.rounds, |total| total / local_steps)
    }

    pub fn run_config(&self, machines: usize, local_steps: usize, eta: f64, seed: u64) -> RunConfig {
        RunConfig {
            machines,
            local_steps,
            rounds: self.rounds_for(local_steps),
            eta,
            schedule: self.schedule,
            seed,
            record_diagnostics: self.diagnostics,
        }
    }
}

/// A constructed problem together with what the runner needs around it.
#[derive(Clone, Debug)]
pub struct BuiltProblem {
    pub problem: Problem,
    pub metadata: Option<ProblemMetadata>,
    /// Set for classification problems: the model and its held-out data.
    pub evaluation: Option<(Arc<LogisticEnsemble>, LabeledDataset)>,
}

/// MNIST training and test sets, loaded once per experiment.
pub type MnistData = (LabeledDataset, LabeledDataset);

/// Builds the `M`-machine problem described by `spec`.
pub fn build_problem(spec: &ExperimentSpec, machines: usize, mnist: Option<&MnistData>) -> Result<BuiltProblem> {
    match spec.problem {
        ProblemKind::Quadratic => {
            let q = QuadraticSpec {
                dim: spec.d,
                machines,
                curvature: spec.curvature,
                eig_min: spec.eig_min,
                eig_max: spec.eig_max,
                center_norm: spec.center_norm,
                center_spread: spec.center_spread,
                gstar_target: spec.gstar,
                sigma: spec.sigma,
                seed: spec.problem_seed,
            }
            .build()?;
            let objective: Arc<dyn Objective> = Arc::new(q);
            let start = vec![0.0; spec.d];
            let metadata = ProblemMetadata::compute(objective.as_ref(), &start)?;
            let optimum = crate::objectives::Optimum {
                point: metadata.optimum.clone(),
                value: metadata.optimum_value,
            };
            Ok(BuiltProblem {
                problem: Problem::new(objective, start, Some(optimum))?,
                metadata: Some(metadata),
                evaluation: None,
            })
        }
        ProblemKind::Logistic => {
            let (shards, test) = data::synth_clusters(&ClusterSpec {
                machines,
                dim: spec.d,
                classes: spec.classes,
                spread: spec.spread,
                skew: spec.skew,
                examples_per_machine: spec.examples_per_machine,
                seed: spec.problem_seed,
            })?;
            let mut model = LogisticEnsemble::new(shards, spec.lambda)?;
            let start = vec![0.0; model.dim()];
            let optimum = model.optimum()?;
            model.calibrate_noise(&optimum.point);
            let metadata = ProblemMetadata::with_optimum(&model, &start, optimum.clone())?;
            let model = Arc::new(model);
            Ok(BuiltProblem {
                problem: Problem::new(model.clone(), start, Some(optimum))?,
                metadata: Some(metadata),
                evaluation: Some((model, test)),
            })
        }
        ProblemKind::MnistLogistic => {
            let (train, test) = mnist.ok_or_else(|| Error::field("data_dir", "mnist-logistic needs the MNIST files"))?;
            let train = if spec.train_limit > 0 && spec.train_limit < train.len() {
                train.subset(&(0..spec.train_limit).collect::<Vec<_>>())?
            } else {
                train.clone()
            };
            let partition = dirichlet_partition(train.labels(), machines, spec.dirichlet_alpha, spec.problem_seed)?;
            let shards: Vec<LabeledDataset> = partition.shards().iter().map(|idx| train.subset(idx)).collect::<Result<_>>()?;
            let model = Arc::new(LogisticEnsemble::new(shards, spec.lambda)?);
            let start = vec![0.0; model.dim()];
            Ok(BuiltProblem {
                problem: Problem::new(model.clone(), start, None)?,
                metadata: None,
                evaluation: Some((model, test.clone())),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_spec_round_trip() {
        for s in ["theory", "fixed:0.01", "grid:[0.01,0.1]"] {
            let lr: LrSpec = s.parse().unwrap();
            assert_eq!(lr.to_string(), s);
        }
        assert_eq!("grid:[ 0.5 , 1 ]".parse::<LrSpec>().unwrap(), LrSpec::Grid(vec![0.5, 1.0]));
        for bad in ["fixed:-1", "grid:[]", "grid:0.1", "adaptive", "fixed:abc"] {
            assert!(bad.parse::<LrSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn scalars_and_lists() {
        let spec = ExperimentSpec::from_toml(
            r#"
            algorithm = ["minibatch", "slowcal"]
            M = 4
            K = [4, 8]
            R = 10
            lr = "fixed:0.01"
            seeds = 3
            "#,
        )
        .unwrap();
        assert_eq!(spec.algorithm, vec![Algorithm::Minibatch, Algorithm::Slowcal]);
        assert_eq!(spec.machines, vec![4]);
        assert_eq!(spec.local_steps, vec![4, 8]);
        assert_eq!(spec.seeds, vec![3]);
        assert_eq!(spec.lr, LrSpec::Fixed(0.01));
        // defaults survive and echo back
        let again = ExperimentSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn invalid_fields_are_named() {
        let cases = [
            ("M = 0", "M"),
            ("K = []", "K"),
            ("lr = \"grid:[]\"", "lr"),
            ("eig_min = 0.0", "eig_min"),
            ("total_steps = 10\nK = [4]", "total_steps"),
        ];
        for (text, field) in cases {
            let err = ExperimentSpec::from_toml(text).unwrap_err().to_string();
            assert!(err.contains(field), "{text}: {err}");
        }
        let err = ExperimentSpec::from_toml("colour = 3").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn total_steps_sets_rounds() {
        let spec = ExperimentSpec::from_toml("K = [4, 64]\ntotal_steps = 256").unwrap();
        assert_eq!(spec.rounds_for(4), 64);
        assert_eq!(spec.rounds_for(64), 4);
    }

    #[test]
    fn quadratic_problem_has_metadata() {
        let spec = ExperimentSpec {
            d: 5,
            ..ExperimentSpec::default()
        };
        let built = build_problem(&spec, 4, None).unwrap();
        let meta = built.metadata.unwrap();
        assert!((meta.gstar - 2.0).abs() < 1e-9);
        assert_eq!(built.problem.objective.machines(), 4);
    }
}
