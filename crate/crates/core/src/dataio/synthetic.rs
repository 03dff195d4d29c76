use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_unit, ModalityDataset, Split};
use crate::numerics::{orthonormal_columns, DenseMatrix, FeatureMap};
use crate::{Error, Result};

/// Parameters of the shared-plus-private union-of-subspaces generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    /// Image side; images are `side × side`.
    pub side: usize,
    pub modalities: usize,
    pub shared_dim: usize,
    pub private_dim: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Largest spatial frequency of the cosine atoms spanning the bases.
    /// Bases are smooth images, so a pixel permutation destroys their
    /// local structure.
    pub max_frequency: usize,
    /// Fraction of every cluster placed in the learning split.
    pub learning_fraction: f64,
    /// Rescale each modality onto [0, 1].
    pub normalize: bool,
}

impl SyntheticSpec {
    /// Four clusters of 40 samples, three 8×8 modalities, `d_s = 3`, `d_p = 2`,
    /// `σ = 0.01`.
    pub fn fixture(seed: u64) -> Self {
        SyntheticSpec {
            clusters: 4,
            per_cluster: 40,
            side: 8,
            modalities: 3,
            shared_dim: 3,
            private_dim: 2,
            sigma: 0.01,
            seed,
            max_frequency: 7,
            learning_fraction: 0.75,
            normalize: true,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let pixels = self.side * self.side;
        if self.clusters < 2 {
            out.push(format!("clusters must be at least 2, got {}", self.clusters));
        }
        if self.modalities < 2 {
            out.push(format!("modalities must be at least 2, got {}", self.modalities));
        }
        if self.side == 0 {
            out.push("side must be positive".into());
        }
        if self.shared_dim == 0 {
            out.push("shared_dim must be positive".into());
        }
        let atoms = (self.max_frequency + 1).min(self.side).pow(2);
        let needed = self.shared_dim + self.private_dim * self.modalities;
        if needed > pixels.min(atoms) {
            out.push(format!(
                "shared_dim + modalities * private_dim = {needed} exceeds the {} available basis directions",
                pixels.min(atoms)
            ));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            out.push(format!("sigma must be a nonnegative real, got {}", self.sigma));
        }
        if !(self.learning_fraction > 0.0 && self.learning_fraction <= 1.0) {
            out.push(format!("learning_fraction must lie in (0, 1], got {}", self.learning_fraction));
        }
        if self.per_cluster < 2 {
            out.push("per_cluster must be at least 2".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    /// Samples per cluster that go to the learning split.
    pub fn learning_per_cluster(&self) -> usize {
        let k = (self.per_cluster as f64 * self.learning_fraction).round() as usize;
        k.clamp(1, self.per_cluster)
    }
}

/// Generated splits together with the planted bases, for oracles.
#[derive(Clone, Debug)]
pub struct SyntheticSplits {
    pub learning: ModalityDataset,
    pub validation: ModalityDataset,
    /// `shared[p]`: pixels × d_s orthonormal basis of cluster `p`.
    pub shared: Vec<DenseMatrix>,
    /// `private[p][t]`: pixels × d_p orthonormal basis.
    pub private: Vec<Vec<DenseMatrix>>,
}

/// Pixels × atoms matrix of separable 2-D cosine atoms with frequencies below
/// `max_frequency + 1` on each axis.
fn cosine_dictionary(side: usize, max_frequency: usize) -> DenseMatrix {
    let f = (max_frequency + 1).min(side);
    let s = side as f64;
    DenseMatrix::from_fn(side * side, f * f, |px, atom| {
        let (y, x) = ((px / side) as f64, (px % side) as f64);
        let (u, v) = ((atom / f) as f64, (atom % f) as f64);
        (std::f64::consts::PI * u * (y + 0.5) / s).cos() * (std::f64::consts::PI * v * (x + 0.5) / s).cos()
    })
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Draws a random orthonormal basis inside the span of `dict`, with atom
/// weights decaying in frequency so that images stay smooth.
fn smooth_basis(rng: &mut ChaCha8Rng, dict: &DenseMatrix, decay: &[f64], dim: usize) -> Result<DenseMatrix> {
    if dim == 0 {
        return Ok(DenseMatrix::zeros(dict.nrows(), 0));
    }
    let mut coef = gaussian(rng, dict.ncols(), dim);
    for (r, w) in decay.iter().enumerate() {
        coef.row_mut(r).scale_mut(*w);
    }
    orthonormal_columns(dict * coef)
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSplits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pixels = spec.side * spec.side;
    let dict = cosine_dictionary(spec.side, spec.max_frequency);
    let f = (spec.max_frequency + 1).min(spec.side);
    let decay: Vec<f64> = (0..f * f).map(|a| 1.0 / (1.0 + ((a / f) + (a % f)) as f64)).collect();

    let mut shared = Vec::with_capacity(spec.clusters);
    let mut private = Vec::with_capacity(spec.clusters);
    for _ in 0..spec.clusters {
        // Shared and private directions of one cluster are drawn jointly so
        // that together they stay linearly independent.
        let joint = smooth_basis(&mut rng, &dict, &decay, spec.shared_dim + spec.private_dim * spec.modalities)?;
        let s = joint.columns(0, spec.shared_dim).into_owned();
        let ps: Vec<DenseMatrix> = (0..spec.modalities)
            .map(|t| joint.columns(spec.shared_dim + t * spec.private_dim, spec.private_dim).into_owned())
            .collect();
        shared.push(s);
        private.push(ps);
    }

    let n = spec.clusters * spec.per_cluster;
    // Rows are samples, columns are pixels.
    let mut raw: Vec<DenseMatrix> = (0..spec.modalities).map(|_| DenseMatrix::zeros(n, pixels)).collect();
    let mut labels = Vec::with_capacity(n);
    for p in 0..spec.clusters {
        for k in 0..spec.per_cluster {
            let i = p * spec.per_cluster + k;
            labels.push(p);
            let c = gaussian(&mut rng, spec.shared_dim, 1);
            let common = &shared[p] * &c;
            for (t, x) in raw.iter_mut().enumerate() {
                let e = gaussian(&mut rng, spec.private_dim, 1);
                let mut v = &common + &private[p][t] * &e;
                if spec.sigma > 0.0 {
                    v += gaussian(&mut rng, pixels, 1) * spec.sigma;
                }
                x.row_mut(i).copy_from(&v.transpose());
            }
        }
    }

    let mut maps: Vec<FeatureMap> = raw
        .into_iter()
        .map(|x| FeatureMap::from_vec(n, spec.side, spec.side, 1, x.transpose().as_slice().to_vec()))
        .collect::<Result<_>>()?;
    if spec.normalize {
        normalize_unit(&mut maps)?;
    }

    // Stratified split, each part in a seeded random order.
    let keep = spec.learning_per_cluster();
    let mut learn_idx = Vec::new();
    let mut valid_idx = Vec::new();
    for p in 0..spec.clusters {
        let mut members: Vec<usize> = (p * spec.per_cluster..(p + 1) * spec.per_cluster).collect();
        members.shuffle(&mut rng);
        learn_idx.extend_from_slice(&members[..keep]);
        valid_idx.extend_from_slice(&members[keep..]);
    }
    learn_idx.shuffle(&mut rng);
    valid_idx.shuffle(&mut rng);
    let pick = |idx: &[usize], split: Split| -> Result<ModalityDataset> {
        let mods = maps.iter().map(|m| select_samples(m, idx)).collect();
        ModalityDataset::new(mods, Some(idx.iter().map(|&i| labels[i]).collect()), split)
    };
    Ok(SyntheticSplits {
        learning: pick(&learn_idx, Split::Learning)?,
        validation: pick(&valid_idx, Split::Validation)?,
        shared,
        private,
    })
}

/// The samples `idx` of `m`, in that order.
pub fn select_samples(m: &FeatureMap, idx: &[usize]) -> FeatureMap {
    let len = m.sample_len();
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        data.extend_from_slice(m.sample(i));
    }
    FeatureMap {
        batch: idx.len(),
        height: m.height,
        width: m.width,
        channels: m.channels,
        data,
    }
}
