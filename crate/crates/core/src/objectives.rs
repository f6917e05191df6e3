//! Heterogeneous `M`-machine convex objectives `f = (1/M) Σ_i f_i` with exact
//! and stochastic gradient oracles.
//!
//! Two families are provided: quadratics `f_i(x) = ½ (x - b_i)ᵀ A_i (x - b_i)`
//! with isotropic Gaussian gradient noise, and multinomial logistic regression
//! over per-machine data shards.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dist_sq, norm_sq};
use crate::rng::{domain_rng, SampleKey};

/// Minimiser of the global objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Machine-indexed convex objective with gradient oracles.
///
/// Implementations are immutable; randomness enters only through the
/// [`SampleKey`] passed to [`Objective::stochastic_gradient`].
pub trait Objective: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn machines(&self) -> usize;
    /// Bound `σ` on `E‖∇f_i(x; z) - ∇f_i(x)‖²`.
    fn noise_level(&self) -> f64;
    fn machine_value(&self, machine: usize, x: &[f64]) -> Result<f64>;
    fn exact_gradient(&self, machine: usize, x: &[f64]) -> Result<Vec<f64>>;
    fn stochastic_gradient(&self, machine: usize, x: &[f64], key: SampleKey) -> Result<Vec<f64>>;
    /// Common smoothness constant `L` of every `f_i`.
    fn smoothness(&self) -> Result<f64>;
    fn optimum(&self) -> Result<Optimum>;

    fn check_input(&self, machine: usize, x: &[f64]) -> Result<()> {
        if machine >= self.machines() {
            return Err(Error::MachineIndex {
                index: machine,
                machines: self.machines(),
            });
        }
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn global_value(&self, x: &[f64]) -> f64 {
        let m = self.machines();
        (0..m)
            .map(|i| self.machine_value(i, x).expect("machine index in range"))
            .sum::<f64>()
            / m as f64
    }

    fn global_gradient(&self, x: &[f64]) -> Vec<f64> {
        let m = self.machines();
        let mut g = vec![0.0; self.dim()];
        for i in 0..m {
            let gi = self.exact_gradient(i, x).expect("machine index in range");
            axpy(1.0, &gi, &mut g);
        }
        linalg::scale(1.0 / m as f64, &mut g);
        g
    }
}

/// Curvature of a quadratic ensemble: one matrix for all machines or one
/// per machine.
#[derive(Clone, Debug)]
pub enum Curvature {
    Shared(DMatrix<f64>),
    PerMachine(Vec<DMatrix<f64>>),
}

#[derive(Clone, Debug)]
pub struct QuadraticEnsemble {
    dim: usize,
    curvature: Curvature,
    centers: Vec<Vec<f64>>,
    sigma: f64,
}

const PSD_FLOOR: f64 = -1e-10;

fn check_psd(machine: usize, a: &DMatrix<f64>, dim: usize) -> Result<()> {
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: a.nrows(),
        });
    }
    let scale = a.amax().max(1.0);
    for r in 0..dim {
        for c in 0..r {
            if (a[(r, c)] - a[(c, r)]).abs() > 1e-12 * scale {
                return Err(Error::NotPsd {
                    machine,
                    min_eig: f64::NAN,
                });
            }
        }
    }
    let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
    if min_eig < PSD_FLOOR {
        return Err(Error::NotPsd { machine, min_eig });
    }
    Ok(())
}

/// `A v` for symmetric `A` stored column-major.
fn sym_matvec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    a.as_slice().chunks_exact(d).map(|col| linalg::dot(col, v)).collect()
}

impl QuadraticEnsemble {
    pub fn new(curvature: Curvature, centers: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let machines = centers.len();
        if machines == 0 {
            return Err(Error::field("M", "need at least one machine"));
        }
        let dim = centers[0].len();
        if dim == 0 {
            return Err(Error::field("d", "dimension must be positive"));
        }
        if let Some(bad) = centers.iter().find(|c| c.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: bad.len(),
            });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::field("sigma", "must be finite and >= 0"));
        }
        match &curvature {
            Curvature::Shared(a) => check_psd(0, a, dim)?,
            Curvature::PerMachine(list) => {
                if list.len() != machines {
                    return Err(Error::field(
                        "curvature",
                        format!("{} matrices for {machines} machines", list.len()),
                    ));
                }
                for (i, a) in list.iter().enumerate() {
                    check_psd(i, a, dim)?;
                }
            }
        }
        Ok(QuadraticEnsemble {
            dim,
            curvature,
            centers,
            sigma,
        })
    }

    /// Convenience constructor for `A = I` on every machine.
    pub fn identity(centers: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let dim = centers.first().map_or(0, Vec::len);
        Self::new(Curvature::Shared(DMatrix::identity(dim, dim)), centers, sigma)
    }

    pub fn curvature(&self, machine: usize) -> &DMatrix<f64> {
        match &self.curvature {
            Curvature::Shared(a) => a,
            Curvature::PerMachine(list) => &list[machine],
        }
    }

    pub fn has_shared_curvature(&self) -> bool {
        matches!(self.curvature, Curvature::Shared(_))
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    fn curvature_sum(&self) -> DMatrix<f64> {
        match &self.curvature {
            Curvature::Shared(a) => a * self.centers.len() as f64,
            Curvature::PerMachine(list) => list.iter().fold(DMatrix::zeros(self.dim, self.dim), |acc, a| acc + a),
        }
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration on the
/// Rayleigh quotient.
pub fn power_iteration(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let d = a.nrows();
    if a.amax() == 0.0 {
        return Ok(0.0);
    }
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 0.1 * ((j * 7919) % 13) as f64).collect();
    let n = linalg::norm(&v);
    linalg::scale(1.0 / n, &mut v);
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let mut w = sym_matvec(a, &v);
        lambda = linalg::dot(&v, &w);
        let residual = w.iter().zip(&v).map(|(wi, vi)| (wi - lambda * vi).powi(2)).sum::<f64>().sqrt();
        if residual <= tol * lambda.abs() {
            return Ok(lambda);
        }
        let wn = linalg::norm(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        linalg::scale(1.0 / wn, &mut w);
        v = w;
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: max_iter,
        residual: lambda,
    })
}

impl Objective for QuadraticEnsemble {
    fn kind(&self) -> &'static str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn machines(&self) -> usize {
        self.centers.len()
    }

    fn noise_level(&self) -> f64 {
        self.sigma
    }

    fn machine_value(&self, machine: usize, x: &[f64]) -> Result<f64> {
        self.check_input(machine, x)?;
        let r = linalg::sub(x, &self.centers[machine]);
        Ok(0.5 * linalg::dot(&r, &sym_matvec(self.curvature(machine), &r)))
    }

    fn exact_gradient(&self, machine: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(machine, x)?;
        let r = linalg::sub(x, &self.centers[machine]);
        Ok(sym_matvec(self.curvature(machine), &r))
    }

    fn stochastic_gradient(&self, machine: usize, x: &[f64], key: SampleKey) -> Result<Vec<f64>> {
        let mut g = self.exact_gradient(machine, x)?;
        if self.sigma > 0.0 {
            let s = self.sigma / (self.dim as f64).sqrt();
            let mut rng = key.rng();
            for gj in g.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *gj += s * z;
            }
        }
        Ok(g)
    }

    fn smoothness(&self) -> Result<f64> {
        match &self.curvature {
            Curvature::Shared(a) => power_iteration(a, 1e-9, 10_000),
            Curvature::PerMachine(list) => list
                .iter()
                .map(|a| power_iteration(a, 1e-9, 10_000))
                .try_fold(0.0f64, |m, l| Ok(m.max(l?))),
        }
    }

    fn optimum(&self) -> Result<Optimum> {
        let sum = self.curvature_sum();
        let eig = SymmetricEigen::new(sum.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if hi <= 0.0 || lo <= 1e-12 * hi {
            return Err(Error::Degenerate(format!(
                "summed curvature is singular (eigenvalues in [{lo:e}, {hi:e}]); f is unbounded or has no unique minimiser"
            )));
        }
        let mut rhs = DVector::zeros(self.dim);
        for (i, b) in self.centers.iter().enumerate() {
            rhs += DVector::from_vec(sym_matvec(self.curvature(i), b));
        }
        let chol = sum
            .cholesky()
            .ok_or_else(|| Error::Degenerate("summed curvature is not positive definite".into()))?;
        let point: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
        let value = self.global_value(&point);
        Ok(Optimum { point, value })
    }
}

/// Whether the generated ensemble uses one curvature for all machines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureKind {
    Shared,
    PerMachine,
}

/// Random quadratic ensemble generator.
///
/// Centers are `b_i = μ + c·δ_i` with `‖μ‖ = center_norm` and unit-scale
/// Gaussian deviations `δ_i`. When `gstar_target` is set, `c` is chosen so
/// that the ensemble's `G_*` equals the target (`G_*` is linear in `c`).
#[derive(Clone, Debug)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub machines: usize,
    pub curvature: CurvatureKind,
    pub eig_min: f64,
    pub eig_max: f64,
    pub center_norm: f64,
    pub center_spread: f64,
    pub gstar_target: Option<f64>,
    pub sigma: f64,
    pub seed: u64,
}

fn random_psd<R: Rng>(rng: &mut R, dim: usize, eig_min: f64, eig_max: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let (lo, hi) = (eig_min.ln(), eig_max.ln());
    let eigs: Vec<f64> = (0..dim)
        .map(|j| match j {
            0 => eig_max,
            1 if dim > 1 => eig_min,
            _ => (lo + (hi - lo) * rng.random::<f64>()).exp(),
        })
        .collect();
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eigs)) * q.transpose();
    // exact symmetry
    (&a + a.transpose()) * 0.5
}

impl QuadraticSpec {
    pub fn build(&self) -> Result<QuadraticEnsemble> {
        if self.dim == 0 || self.machines == 0 {
            return Err(Error::field("d", "dimension and machine count must be positive"));
        }
        if !(self.eig_min > 0.0 && self.eig_max >= self.eig_min) {
            return Err(Error::field("eig_min", "need 0 < eig_min <= eig_max"));
        }
        let mut rng = domain_rng(self.seed, "quadratic-ensemble");
        let curvature = match self.curvature {
            CurvatureKind::Shared => Curvature::Shared(random_psd(&mut rng, self.dim, self.eig_min, self.eig_max)),
            CurvatureKind::PerMachine => Curvature::PerMachine(
                (0..self.machines)
                    .map(|_| random_psd(&mut rng, self.dim, self.eig_min, self.eig_max))
                    .collect(),
            ),
        };
        let mut mu: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&mu);
        linalg::scale(self.center_norm / n, &mut mu);
        let deviations: Vec<Vec<f64>> = (0..self.machines)
            .map(|_| {
                (0..self.dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / (self.dim as f64).sqrt())
                    .collect()
            })
            .collect();
        let place = |c: f64| -> Vec<Vec<f64>> {
            deviations
                .iter()
                .map(|dev| mu.iter().zip(dev).map(|(m, d)| m + c * d).collect())
                .collect()
        };
        let mut ensemble = QuadraticEnsemble::new(curvature, place(self.center_spread), self.sigma)?;
        if let Some(target) = self.gstar_target {
            if !(target >= 0.0 && target.is_finite()) {
                return Err(Error::field("gstar", "target must be finite and >= 0"));
            }
            let current = gstar(&ensemble, &ensemble.optimum()?);
            let c = if target == 0.0 {
                0.0
            } else if current > 0.0 {
                self.center_spread * target / current
            } else {
                return Err(Error::field("gstar", "ensemble is homogeneous; cannot reach a positive G_*"));
            };
            ensemble.centers = place(c);
        }
        Ok(ensemble)
    }
}

/// Multinomial logistic regression; parameters are the row-major
/// `classes x features` weight matrix.
#[derive(Clone, Debug)]
pub struct LogisticEnsemble {
    shards: Vec<LabeledDataset>,
    features: usize,
    classes: usize,
    lambda: f64,
    sigma: f64,
}

/// Options for the full-batch gradient-descent optimum oracle.
#[derive(Clone, Copy, Debug)]
pub struct GdOracle {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for GdOracle {
    fn default() -> Self {
        GdOracle {
            tolerance: 1e-10,
            max_iter: 500_000,
        }
    }
}

impl LogisticEnsemble {
    pub fn new(shards: Vec<LabeledDataset>, lambda: f64) -> Result<Self> {
        let first = shards
            .first()
            .ok_or_else(|| Error::field("M", "need at least one machine"))?;
        let (features, classes) = (first.dim(), first.classes());
        if let Some(bad) = shards.iter().find(|s| s.dim() != features || s.classes() != classes) {
            return Err(Error::Dimension {
                expected: features,
                actual: bad.dim(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::field("lambda", "must be finite and >= 0"));
        }
        let mut ensemble = LogisticEnsemble {
            shards,
            features,
            classes,
            lambda,
            sigma: 0.0,
        };
        ensemble.sigma = ensemble.noise_at(&vec![0.0; ensemble.dim()]);
        Ok(ensemble)
    }

    pub fn shards(&self) -> &[LabeledDataset] {
        &self.shards
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Replaces the stored noise level with the per-example gradient spread
    /// measured at `x` (typically the optimum).
    pub fn calibrate_noise(&mut self, x: &[f64]) {
        self.sigma = self.noise_at(x);
    }

    /// `sqrt(max_i mean_j ‖∇ℓ_j(x) - ∇f_i(x)‖²)` over each shard.
    pub fn noise_at(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        let mut g = vec![0.0; self.dim()];
        for shard in &self.shards {
            let mean = self.shard_gradient(shard, x);
            let mut acc = 0.0;
            for j in 0..shard.len() {
                g.iter_mut().for_each(|v| *v = 0.0);
                self.example_gradient(shard, j, x, &mut g);
                acc += dist_sq(&g, &mean);
            }
            worst = worst.max(acc / shard.len() as f64);
        }
        worst.sqrt()
    }

    fn logits(&self, row: &[f32], x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &x[c * self.features..(c + 1) * self.features];
            *o = w.iter().zip(row).map(|(wi, &a)| wi * a as f64).sum();
        }
    }

    /// Softmax probabilities in place; returns `log Σ exp(z)`.
    fn softmax(z: &mut [f64]) -> f64 {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in z.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        z.iter_mut().for_each(|v| *v /= s);
        m + s.ln()
    }

    fn example_loss(&self, shard: &LabeledDataset, j: usize, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.classes];
        self.logits(shard.row(j), x, &mut z);
        let y = shard.label(j);
        let zy = z[y];
        let lse = Self::softmax(&mut z);
        lse - zy
    }

    /// Adds the data-term gradient of example `j` into `out`.
    fn example_gradient(&self, shard: &LabeledDataset, j: usize, x: &[f64], out: &mut [f64]) {
        let mut p = vec![0.0; self.classes];
        let row = shard.row(j);
        self.logits(row, x, &mut p);
        Self::softmax(&mut p);
        p[shard.label(j)] -= 1.0;
        for (c, &pc) in p.iter().enumerate() {
            let block = &mut out[c * self.features..(c + 1) * self.features];
            for (o, &a) in block.iter_mut().zip(row) {
                *o += pc * a as f64;
            }
        }
    }

    fn shard_gradient(&self, shard: &LabeledDataset, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for j in 0..shard.len() {
            self.example_gradient(shard, j, x, &mut g);
        }
        linalg::scale(1.0 / shard.len() as f64, &mut g);
        axpy(self.lambda, x, &mut g);
        g
    }

    /// Mean cross-entropy (without the L2 term) and accuracy on `data`.
    pub fn evaluate(&self, x: &[f64], data: &LabeledDataset) -> (f64, f64) {
        let mut z = vec![0.0; self.classes];
        let (mut loss, mut correct) = (0.0, 0usize);
        for j in 0..data.len() {
            self.logits(data.row(j), x, &mut z);
            let y = data.label(j);
            let pred = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0;
            if pred == y {
                correct += 1;
            }
            let zy = z[y];
            loss += Self::softmax(&mut z) - zy;
        }
        (loss / data.len() as f64, correct as f64 / data.len() as f64)
    }

    /// Full-batch gradient descent with step `1/L` until `‖∇f‖ <= tolerance`.
    pub fn optimum_with(&self, oracle: GdOracle) -> Result<Optimum> {
        if self.lambda <= 0.0 {
            return Err(Error::Degenerate("logistic optimum requires lambda > 0".into()));
        }
        let step = 1.0 / self.smoothness()?;
        let mut x = vec![0.0; self.dim()];
        let mut gnorm = f64::INFINITY;
        for _ in 0..oracle.max_iter {
            let g = self.global_gradient(&x);
            gnorm = linalg::norm(&g);
            if gnorm <= oracle.tolerance {
                let value = self.global_value(&x);
                return Ok(Optimum { point: x, value });
            }
            axpy(-step, &g, &mut x);
        }
        Err(Error::NoConvergence {
            what: "full-batch gradient descent",
            iterations: oracle.max_iter,
            residual: gnorm,
        })
    }
}

impl Objective for LogisticEnsemble {
    fn kind(&self) -> &'static str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.features * self.classes
    }

    fn machines(&self) -> usize {
        self.shards.len()
    }

    fn noise_level(&self) -> f64 {
        self.sigma
    }

    fn machine_value(&self, machine: usize, x: &[f64]) -> Result<f64> {
        self.check_input(machine, x)?;
        let shard = &self.shards[machine];
        let data: f64 = (0..shard.len()).map(|j| self.example_loss(shard, j, x)).sum::<f64>() / shard.len() as f64;
        Ok(data + 0.5 * self.lambda * norm_sq(x))
    }

    fn exact_gradient(&self, machine: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(machine, x)?;
        Ok(self.shard_gradient(&self.shards[machine], x))
    }

    fn stochastic_gradient(&self, machine: usize, x: &[f64], key: SampleKey) -> Result<Vec<f64>> {
        self.check_input(machine, x)?;
        let shard = &self.shards[machine];
        let j = key.rng().random_range(0..shard.len());
        let mut g = vec![0.0; self.dim()];
        self.example_gradient(shard, j, x, &mut g);
        axpy(self.lambda, x, &mut g);
        Ok(g)
    }

    /// `½ max‖a‖² + λ`: the softmax cross-entropy Hessian in logit space has
    /// spectral norm at most ½.
    fn smoothness(&self) -> Result<f64> {
        let max_sq = self
            .shards
            .iter()
            .flat_map(|s| (0..s.len()).map(move |j| s.row(j).iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>()))
            .fold(0.0f64, f64::max);
        Ok(0.5 * max_sq + self.lambda)
    }

    fn optimum(&self) -> Result<Optimum> {
        self.optimum_with(GdOracle::default())
    }
}

/// `G_* = sqrt(2 · (1/M) Σ_i ‖∇f_i(w*)‖²)`, i.e. the dissimilarity bound
/// held with equality.
pub fn gstar(objective: &dyn Objective, optimum: &Optimum) -> f64 {
    let m = objective.machines();
    let mean_sq = (0..m)
        .map(|i| norm_sq(&objective.exact_gradient(i, &optimum.point).expect("machine index in range")))
        .sum::<f64>()
        / m as f64;
    (2.0 * mean_sq).sqrt()
}

/// Probe-point lower estimate of the uniform dissimilarity `G`:
/// `G² / 2 >= max_x (1/M) Σ_i ‖∇f_i(x) - ∇f(x)‖²`.
pub fn g_dissimilarity_probe(objective: &dyn Objective, probes: &[Vec<f64>]) -> f64 {
    let m = objective.machines();
    let worst = probes
        .iter()
        .map(|x| {
            let g = objective.global_gradient(x);
            (0..m)
                .map(|i| dist_sq(&objective.exact_gradient(i, x).expect("machine index in range"), &g))
                .sum::<f64>()
                / m as f64
        })
        .fold(0.0f64, f64::max);
    (2.0 * worst).sqrt()
}

/// Constants of a problem instance relative to a start point `w_0`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemMetadata {
    pub smoothness: f64,
    pub sigma: f64,
    pub gstar: f64,
    pub optimum: Vec<f64>,
    pub optimum_value: f64,
    pub b0: f64,
}

impl ProblemMetadata {
    pub fn compute(objective: &dyn Objective, start: &[f64]) -> Result<Self> {
        let optimum = objective.optimum()?;
        Self::with_optimum(objective, start, optimum)
    }

    pub fn with_optimum(objective: &dyn Objective, start: &[f64], optimum: Optimum) -> Result<Self> {
        if start.len() != objective.dim() {
            return Err(Error::Dimension {
                expected: objective.dim(),
                actual: start.len(),
            });
        }
        Ok(ProblemMetadata {
            smoothness: objective.smoothness()?,
            sigma: objective.noise_level(),
            gstar: gstar(objective, &optimum),
            b0: dist_sq(start, &optimum.point).sqrt(),
            optimum: optimum.point,
            optimum_value: optimum.value,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthCheck {
    pub holds: bool,
    /// `G_*² + 4L(f(x) - f(w*)) - (1/M) Σ_i ‖∇f_i(x)‖²`
    pub slack: f64,
}

/// Checks `(1/M) Σ_i ‖∇f_i(x)‖² <= G_*² + 4L(f(x) - f(w*))`.
pub fn check_growth_bound(objective: &dyn Objective, meta: &ProblemMetadata, x: &[f64]) -> GrowthCheck {
    let m = objective.machines();
    let lhs = (0..m)
        .map(|i| norm_sq(&objective.exact_gradient(i, x).expect("machine index in range")))
        .sum::<f64>()
        / m as f64;
    let rhs = meta.gstar * meta.gstar + 4.0 * meta.smoothness * (objective.global_value(x) - meta.optimum_value);
    let slack = rhs - lhs;
    GrowthCheck {
        holds: slack >= 0.0,
        slack,
    }
}

/// Slack in `‖∇f(x)‖² <= 2L(f(x) - f(w*))`.
pub fn self_bounding_slack(objective: &dyn Objective, meta: &ProblemMetadata, x: &[f64]) -> f64 {
    let g = objective.global_gradient(x);
    2.0 * meta.smoothness * (objective.global_value(x) - meta.optimum_value) - norm_sq(&g)
}
