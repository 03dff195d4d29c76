//! Coefficient fusion, affinity construction, spectral clustering, agreement
//! metrics and the principal-subspace classifier.

mod metrics;
mod spectral;
mod subspace;

pub use metrics::{ari_nmi, cluster_accuracy, hungarian_max, Agreement, MetricSet};
pub use spectral::{kmeans, spectral_cluster, spectral_embedding, KMEANS_RESTARTS};
pub use subspace::{classify, fit_cluster_subspaces, ClusterSubspaces, ModalSubspace, SubspaceDim};

use std::fmt::Write as _;

use crate::numerics::DenseMatrix;
use crate::{Error, Result};

/// `W_total = Σ_t W(t)`.
pub fn fuse_coefficients(ws: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = ws.first().ok_or_else(|| Error::Dimension("no coefficient matrices to fuse".into()))?;
    let mut total = first.clone();
    for (t, w) in ws.iter().enumerate().skip(1) {
        if w.shape() != first.shape() {
            return Err(Error::Dimension(format!("W({t}) is {:?}, W(0) is {:?}", w.shape(), first.shape())));
        }
        total += w;
    }
    Ok(total)
}

/// `A = |W| + |W|ᵀ` with a zero diagonal.
pub fn build_affinity(w: &DenseMatrix) -> Result<DenseMatrix> {
    if !w.is_square() {
        return Err(Error::Dimension(format!("affinity needs a square matrix, got {:?}", w.shape())));
    }
    let abs = w.abs();
    let mut a = &abs + abs.transpose();
    a.fill_diagonal(0.0);
    Ok(a)
}

/// Keeps the `q` largest-magnitude entries of every column (ties broken by
/// lower row index); the rest become zero.
pub fn keep_top_q(w: &DenseMatrix, q: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(w.nrows(), w.ncols());
    for j in 0..w.ncols() {
        let mut idx: Vec<usize> = (0..w.nrows()).collect();
        idx.sort_by(|&a, &b| w[(b, j)].abs().total_cmp(&w[(a, j)].abs()).then(a.cmp(&b)));
        for &i in idx.iter().take(q) {
            out[(i, j)] = w[(i, j)];
        }
    }
    out
}

/// Labels as `sample_id,label` CSV.
pub fn labels_to_csv(labels: &[usize]) -> String {
    let mut s = String::from("sample_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(s, "{i},{l}").expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(n: usize, vals: Vec<f64>) -> DenseMatrix {
        DenseMatrix::from_row_slice(n, n, &vals)
    }

    #[test]
    fn fusion_cases() {
        let a = mat(2, vec![0.0, 1.0, 2.0, 0.0]);
        assert_eq!(fuse_coefficients(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(fuse_coefficients(&[a.clone(), -a.clone()]).unwrap(), DenseMatrix::zeros(2, 2));
        assert!(fuse_coefficients(&[a, DenseMatrix::zeros(3, 3)]).is_err());
        assert!(fuse_coefficients(&[]).is_err());
    }

    #[test]
    fn fusion_matches_elementwise_sum() {
        let ws: Vec<DenseMatrix> = (0..3)
            .map(|t| DenseMatrix::from_fn(4, 4, |i, j| ((t * 16 + i * 4 + j) as f64).sin()))
            .collect();
        let total = fuse_coefficients(&ws).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = ws.iter().map(|w| w[(i, j)]).sum();
                assert!((total[(i, j)] - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn affinity_cases() {
        let w = mat(2, vec![0.0, 0.3, 0.3, 0.0]);
        assert_eq!(build_affinity(&w).unwrap(), w.clone() * 2.0);
        let mut u = DenseMatrix::zeros(3, 3);
        u[(0, 2)] = 0.4;
        let a = build_affinity(&u).unwrap();
        assert_eq!(a[(0, 2)], 0.4);
        assert_eq!(a[(2, 0)], 0.4);
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn top_q_keeps_largest() {
        let w = mat(3, vec![0.0, -0.9, 0.1, 0.5, 0.0, 0.2, -0.6, 0.3, 0.0]);
        let k = keep_top_q(&w, 1);
        assert_eq!(k.column(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, -0.6]);
        assert_eq!(k.column(1).iter().copied().collect::<Vec<_>>(), vec![-0.9, 0.0, 0.0]);
    }

    #[test]
    fn csv_rows() {
        assert_eq!(labels_to_csv(&[1, 0]), "sample_id,label\n0,1\n1,0\n");
    }

    proptest! {
        #[test]
        fn affinity_is_symmetric_nonnegative_hollow(vals in proptest::collection::vec(-5.0f64..5.0, 25)) {
            let a = build_affinity(&mat(5, vals)).unwrap();
            prop_assert_eq!(&a, &a.transpose());
            prop_assert!(a.iter().all(|v| *v >= 0.0));
            prop_assert!((0..5).all(|i| a[(i, i)] == 0.0));
        }
    }
}
