use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Row/column dense matrix of 64-bit reals.
pub type DenseMatrix = DMatrix<f64>;

pub fn ensure_finite_matrix(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Estimate of the squared spectral norm of `m` by power iteration on `mᵀm`.
pub fn spectral_norm_sq(m: &DenseMatrix, iterations: usize) -> f64 {
    let cols = m.ncols();
    if cols == 0 || m.nrows() == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start vector.
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = m.transpose() * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - estimate).abs() <= 1e-12 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn symmetric_eigen_desc(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DenseMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Orthonormalise the columns of `m` (thin QR). Fails if the columns are
/// numerically dependent.
pub fn orthonormal_columns(m: DenseMatrix) -> Result<DenseMatrix> {
    let cols = m.ncols();
    let qr = m.qr();
    let r = qr.r();
    for i in 0..cols {
        if r[(i, i)].abs() < 1e-10 {
            return Err(Error::Degenerate("basis columns are linearly dependent".into()));
        }
    }
    Ok(qr.q())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_eigenvalue() {
        let m = DenseMatrix::from_row_slice(3, 2, &[3.0, 1.0, 0.0, 2.0, 1.0, -1.0]);
        let gram = m.transpose() * &m;
        let (vals, _) = symmetric_eigen_desc(&gram);
        let est = spectral_norm_sq(&m, 500);
        assert!((est - vals[0]).abs() < 1e-9 * vals[0]);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DenseMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -2.0]);
        let (vals, vecs) = symmetric_eigen_desc(&m);
        assert_eq!(vals, vec![5.0, 1.0, -2.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qr_orthonormal() {
        let m = DenseMatrix::from_row_slice(4, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, 0.0, 1.0, 1.0]);
        let q = orthonormal_columns(m).unwrap();
        let eye = q.transpose() * &q;
        assert!((eye - DenseMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
