use serde::{Deserialize, Serialize};

use crate::numerics::{symmetric_eigen_desc, DenseMatrix};
use crate::{Error, Result};

/// How many principal components each cluster keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceDim {
    Fixed(usize),
    /// Smallest count whose eigenvalues explain this fraction of variance.
    Variance(f64),
}

/// Mean and orthonormal principal basis (columns) of one cluster in one
/// modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalSubspace {
    pub mean: Vec<f64>,
    pub basis: DenseMatrix,
}

impl ModalSubspace {
    /// `‖Bᵀ(x − mean)‖²`.
    pub fn projection_energy(&self, x: &[f64]) -> f64 {
        let b = &self.basis;
        let mut total = 0.0;
        for k in 0..b.ncols() {
            let c: f64 = (0..b.nrows()).map(|r| b[(r, k)] * (x[r] - self.mean[r])).sum();
            total += c * c;
        }
        total
    }
}

/// `clusters[p][t]` is the subspace of cluster `p` in modality `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSubspaces {
    pub clusters: Vec<Vec<ModalSubspace>>,
}

impl ClusterSubspaces {
    pub fn modalities(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.len())
    }
}

/// Fits per-cluster principal subspaces. `modalities[t]` holds one sample per
/// row; `labels` take values `0..P` with every cluster present.
pub fn fit_cluster_subspaces(modalities: &[DenseMatrix], labels: &[usize], dim: SubspaceDim) -> Result<ClusterSubspaces> {
    let first = modalities.first().ok_or_else(|| Error::Dimension("no modalities".into()))?;
    let n = first.nrows();
    if labels.len() != n || modalities.iter().any(|m| m.nrows() != n) {
        return Err(Error::Dimension("labels and modalities disagree on the sample count".into()));
    }
    let p_count = labels.iter().max().map_or(0, |m| m + 1);
    let mut clusters = Vec::with_capacity(p_count);
    for p in 0..p_count {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == p).collect();
        let mut per_modality = Vec::with_capacity(modalities.len());
        for (t, x) in modalities.iter().enumerate() {
            let dims = x.ncols();
            let rows = DenseMatrix::from_fn(members.len(), dims, |r, c| x[(members[r], c)]);
            let mean: Vec<f64> = if members.is_empty() {
                vec![0.0; dims]
            } else {
                (0..dims).map(|c| rows.column(c).mean()).collect()
            };
            let centered = DenseMatrix::from_fn(members.len(), dims, |r, c| rows[(r, c)] - mean[c]);
            let cov = centered.transpose() * &centered;
            let (vals, vecs) = symmetric_eigen_desc(&cov);
            let d = match dim {
                SubspaceDim::Fixed(d) => d,
                SubspaceDim::Variance(frac) => {
                    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
                    let mut acc = 0.0;
                    let mut k = 0;
                    while k < vals.len() && (k == 0 || acc < frac * total) {
                        acc += vals[k].max(0.0);
                        k += 1;
                    }
                    k
                }
            };
            if d == 0 || d > dims {
                return Err(Error::Config(format!("subspace dimension {d} is outside 1..={dims}")));
            }
            if members.len() < d + 1 {
                return Err(Error::Degenerate(format!(
                    "cluster {p} has {} members in modality {t}, needs at least {}",
                    members.len(),
                    d + 1
                )));
            }
            per_modality.push(ModalSubspace {
                mean,
                basis: vecs.columns(0, d).into_owned(),
            });
        }
        clusters.push(per_modality);
    }
    Ok(ClusterSubspaces { clusters })
}

/// Cluster whose subspaces capture the most energy of the sample, summed over
/// the available modalities. `sample[t]` is the sample in modality `t`; ties
/// go to the lowest cluster id.
pub fn classify(sample: &[&[f64]], subspaces: &ClusterSubspaces, available: &[usize]) -> Result<usize> {
    if available.is_empty() {
        return Err(Error::Config("at least one modality must be available".into()));
    }
    let t_count = subspaces.modalities();
    if let Some(&t) = available.iter().find(|&&t| t >= t_count || t >= sample.len()) {
        return Err(Error::Dimension(format!("modality {t} is out of range")));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (p, cluster) in subspaces.clusters.iter().enumerate() {
        let score: f64 = available.iter().map(|&t| cluster[t].projection_energy(sample[t])).sum();
        if score > best.1 {
            best = (p, score);
        }
    }
    Ok(best.0)
}
