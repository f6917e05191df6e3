//! Labelled datasets, Dirichlet non-IID partitioning, synthetic clusters and
//! the IDX container used by the MNIST distribution.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::domain_rng;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Row-major `N x d` features with labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    labels: Vec<u32>,
    dim: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f32>, labels: Vec<u32>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("dataset must contain at least one example".into()));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Dimension {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(Error::InvalidConfig(format!("label {bad} out of range for {classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature value".into()));
        }
        Ok(LabeledDataset {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Gathers the given example indices into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(features, labels, self.dim, self.classes)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y as usize] += 1;
        }
        h
    }
}

/// Per-machine index lists over `[0, N)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn machines(&self) -> usize {
        self.shards.len()
    }

    pub fn into_shards(self) -> Vec<Vec<usize>> {
        self.shards
    }
}

/// Draws `p ~ Dirichlet(alpha * 1_M)` by normalising independent
/// `Gamma(alpha, 1)` variates.
fn dirichlet_draw<R: Rng>(rng: &mut R, alpha: f64, m: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut p: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        // every variate underflowed; the limit is a vertex of the simplex
        let hot = rng.random_range(0..m);
        p.iter_mut().enumerate().for_each(|(i, v)| *v = if i == hot { 1.0 } else { 0.0 });
    }
    p
}

fn categorical<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// For every class draws machine proportions from `Dirichlet(alpha)` and
/// assigns each example of that class independently. Machines left empty
/// take one example from the currently largest machine (when `N >= M`).
pub fn dirichlet_partition(labels: &[u32], machines: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if machines == 0 {
        return Err(Error::field("machines", "must be >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::field("dirichlet_alpha", format!("must be > 0, got {alpha}")));
    }
    let mut shards = vec![Vec::new(); machines];
    if machines == 1 {
        shards[0] = (0..labels.len()).collect();
        return Ok(Partition { shards });
    }
    let classes = labels.iter().map(|&y| y as usize + 1).max().unwrap_or(0);
    let mut rng = domain_rng(seed, "dirichlet-partition");
    let cumulative: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let p = dirichlet_draw(&mut rng, alpha, machines);
            p.iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    for (i, &y) in labels.iter().enumerate() {
        let m = categorical(&mut rng, &cumulative[y as usize]);
        shards[m].push(i);
    }
    if labels.len() >= machines {
        while let Some(empty) = shards.iter().position(|s| s.is_empty()) {
            let largest = (0..machines)
                .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
                .expect("machines >= 1");
            let stolen = shards[largest].pop().expect("largest shard is nonempty");
            shards[empty].push(stolen);
        }
    }
    Ok(Partition { shards })
}

/// Gaussian class clusters split across machines with Dirichlet label skew.
#[derive(Clone, Debug)]
pub struct ClusterSpec {
    pub machines: usize,
    pub dim: usize,
    pub classes: usize,
    pub spread: f64,
    pub skew: f64,
    pub examples_per_machine: usize,
    pub seed: u64,
}

/// Class means sit on the scaled simplex `{e_c}` (random unit directions for
/// classes beyond the dimension). Returns the per-machine shards together
/// with a held-out test set drawn from the balanced mixture.
pub fn synth_clusters(spec: &ClusterSpec) -> Result<(Vec<LabeledDataset>, LabeledDataset)> {
    if spec.classes < 2 {
        return Err(Error::field("classes", "need at least 2 classes"));
    }
    if spec.dim == 0 || spec.machines == 0 || spec.examples_per_machine == 0 {
        return Err(Error::field("d", "dimension, machines and examples_per_machine must be positive"));
    }
    let mut rng = domain_rng(spec.seed, "synth-clusters");
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            if c < spec.dim {
                (0..spec.dim).map(|j| if j == c { 1.0 } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = crate::linalg::norm(&v);
                v.into_iter().map(|x| x / n).collect()
            }
        })
        .collect();

    let draw = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Result<LabeledDataset> {
        let labels: Vec<u32> = (0..n).map(|i| (i % spec.classes) as u32).collect();
        let mut features = Vec::with_capacity(n * spec.dim);
        for &y in &labels {
            for &mu in &means[y as usize] {
                let z: f64 = rng.sample(StandardNormal);
                features.push((mu + spec.spread * z) as f32);
            }
        }
        LabeledDataset::new(features, labels, spec.dim, spec.classes)
    };

    let pool = draw(spec.machines * spec.examples_per_machine, &mut rng)?;
    let test = draw(spec.examples_per_machine.max(spec.classes * 50), &mut rng)?;
    let partition = dirichlet_partition(pool.labels(), spec.machines, spec.skew, spec.seed)?;
    let shards = partition
        .shards()
        .iter()
        .map(|idx| pool.subset(idx))
        .collect::<Result<Vec<_>>>()?;
    Ok((shards, test))
}

/// Raw IDX image container; pixels kept as stored bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// Pixels rescaled to `[0, 1]`, one row per image.
    pub fn features(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IDX_IMAGES_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.write_u32::<BigEndian>(v).expect("write to Vec");
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn read_header(cur: &mut Cursor<&[u8]>, words: usize) -> Result<Vec<u32>> {
    let available = cur.get_ref().len();
    if available < 4 * words {
        return Err(Error::IdxTruncated {
            needed: 4 * words,
            available,
        });
    }
    (0..words)
        .map(|_| cur.read_u32::<BigEndian>().map_err(|e| Error::io("<idx>", e)))
        .collect()
}

fn read_payload(cur: &mut Cursor<&[u8]>, needed: usize) -> Result<Vec<u8>> {
    let offset = cur.position() as usize;
    let available = cur.get_ref().len() - offset;
    if available < needed {
        return Err(Error::IdxTruncated {
            needed: offset + needed,
            available: offset + available,
        });
    }
    let mut buf = vec![0u8; needed];
    cur.read_exact(&mut buf).map_err(|e| Error::io("<idx>", e))?;
    Ok(buf)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    let magic = read_header(&mut cur, 1)?[0];
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            expected: IDX_IMAGES_MAGIC,
            actual: magic,
        });
    }
    cur.set_position(0);
    let header = read_header(&mut cur, 4)?;
    let (count, rows, cols) = (header[1] as usize, header[2] as usize, header[3] as usize);
    let pixels = read_payload(&mut cur, count * rows * cols)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    let magic = read_header(&mut cur, 1)?[0];
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic {
            expected: IDX_LABELS_MAGIC,
            actual: magic,
        });
    }
    cur.set_position(0);
    let header = read_header(&mut cur, 2)?;
    read_payload(&mut cur, header[1] as usize)
}

pub fn idx_labels_to_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC).expect("write to Vec");
    out.write_u32::<BigEndian>(labels.len() as u32).expect("write to Vec");
    out.extend_from_slice(labels);
    out
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<LabeledDataset> {
    let imgs = parse_idx_images(&read_file(&dir.join(images))?)?;
    let labs = parse_idx_labels(&read_file(&dir.join(labels))?)?;
    if labs.len() != imgs.count {
        return Err(Error::Dimension {
            expected: imgs.count,
            actual: labs.len(),
        });
    }
    let classes = labs.iter().map(|&y| y as usize + 1).max().unwrap_or(1).max(10);
    LabeledDataset::new(imgs.features(), labs.into_iter().map(u32::from).collect(), imgs.rows * imgs.cols, classes)
}

/// Loads `(train, test)` from the four canonical MNIST file names in `dir`.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_pair(dir, MNIST_FILES[0], MNIST_FILES[1])?;
    let test = load_pair(dir, MNIST_FILES[2], MNIST_FILES[3])?;
    Ok((train, test))
}
