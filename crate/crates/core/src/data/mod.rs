//! Datasets: seeded synthetic generators, the IDX loader and non-IID partitioners.

pub mod idx;
mod partition;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use idx::{load_idx, write_idx};
pub use partition::{label_entropy, partition, Partition, PartitionScheme, PartitionSpec};
pub(crate) use partition::size_weights;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Batch,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            samples: Batch::new(features, labels)?,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.samples.labels
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.subset(idx),
            class_count: self.class_count,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in self.labels() {
            h[l] += 1;
        }
        h
    }

    /// Concatenates datasets sharing dim and class count.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Partition("nothing to concatenate".into()))?;
        let dim = first.dim();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != dim {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.samples.features.shape(),
                    right: p.samples.features.shape(),
                });
            }
            data.extend_from_slice(p.samples.features.as_slice());
            labels.extend_from_slice(p.labels());
        }
        LabeledDataset::new(Matrix::new(labels.len(), dim, data)?, labels, first.class_count)
    }

    /// Seeded shuffle, then the first `round(train_frac · n)` samples (at least
    /// one, and leaving at least one for testing when `n ≥ 2`) form the train shard.
    pub fn train_test_split(&self, train_frac: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut n_train = ((train_frac * n as f64).round() as usize).clamp(1, n);
        if n >= 2 && n_train == n {
            n_train = n - 1;
        }
        let (train, test) = idx.split_at(n_train);
        let test = if test.is_empty() { train } else { test };
        (self.subset(train), self.subset(test))
    }
}

/// Parameters of the Gaussian-cluster task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub class_count: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            class_count: 10,
            dim: 32,
            samples_per_class: 200,
            cluster_spread: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("data.class_count", self.class_count),
            ("data.dim", self.dim),
            ("data.samples_per_class", self.samples_per_class),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    field,
                    reason: "must be >= 1".into(),
                });
            }
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::InvalidConfig {
                field: "data.cluster_spread",
                reason: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Cluster means: one seeded random unit vector per class.
pub fn synthetic_means(params: &SyntheticParams) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rows: Vec<Vec<f64>> = (0..params.class_count)
        .map(|_| unit_vector(params.dim, &mut rng))
        .collect();
    Matrix::from_rows(&rows)
}

/// Isotropic Gaussian clusters around [`synthetic_means`], samples grouped by class.
pub fn gen_synthetic(params: &SyntheticParams) -> LabeledDataset {
    let means = synthetic_means(params);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5EED_DA7A);
    let n = params.class_count * params.samples_per_class;
    let mut data = Vec::with_capacity(n * params.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..params.class_count {
        for _ in 0..params.samples_per_class {
            for &m in means.row(c) {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(m + params.cluster_spread * noise);
            }
            labels.push(c);
        }
    }
    LabeledDataset {
        samples: Batch {
            features: Matrix::new(n, params.dim, data).expect("finite samples"),
            labels,
        },
        class_count: params.class_count,
    }
}

/// Domain-shifted copies of one base task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureShiftParams {
    pub domains: usize,
    pub shift_scale: f64,
    /// Maximum Givens angle (radians); 0 disables rotation.
    pub rotation: f64,
    pub seed: u64,
}

impl Default for FeatureShiftParams {
    fn default() -> Self {
        Self {
            domains: 4,
            shift_scale: 0.5,
            rotation: 0.6,
            seed: 11,
        }
    }
}

/// Random orthogonal map built from Givens rotations on a random pairing of
/// coordinates, each angle uniform in `[-max_angle, max_angle]`.
fn random_rotation(dim: usize, max_angle: f64, rng: &mut impl Rng) -> Matrix {
    let mut q = Matrix::identity(dim);
    if max_angle == 0.0 {
        return q;
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.shuffle(rng);
    for pair in order.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        let theta = rng.random_range(-max_angle..=max_angle);
        let (s, c) = theta.sin_cos();
        q[(a, a)] = c;
        q[(a, b)] = -s;
        q[(b, a)] = s;
        q[(b, b)] = c;
    }
    q
}

/// Each domain maps the shared base samples through `x ↦ Q x + s` with a seeded
/// orthogonal `Q` and a shift `s` of norm `shift_scale`. Labels are unchanged.
pub fn gen_feature_shift(
    base: &SyntheticParams,
    shift: &FeatureShiftParams,
) -> Result<Vec<LabeledDataset>> {
    if shift.domains < 2 {
        return Err(Error::InvalidConfig {
            field: "data.domains",
            reason: format!("need at least 2 domains, got {}", shift.domains),
        });
    }
    let data = gen_synthetic(base);
    let mut rng = ChaCha8Rng::seed_from_u64(shift.seed);
    let mut out = Vec::with_capacity(shift.domains);
    for _ in 0..shift.domains {
        let q = random_rotation(base.dim, shift.rotation, &mut rng);
        let offset: Vec<f64> = unit_vector(base.dim, &mut rng)
            .into_iter()
            .map(|v| v * shift.shift_scale)
            .collect();
        let x = &data.samples.features;
        let moved = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            let mut v = offset[j];
            for (k, xv) in x.row(i).iter().enumerate() {
                v += q[(j, k)] * xv;
            }
            v
        });
        out.push(LabeledDataset {
            samples: Batch {
                features: moved,
                labels: data.labels().to_vec(),
            },
            class_count: data.class_count,
        });
    }
    Ok(out)
}
