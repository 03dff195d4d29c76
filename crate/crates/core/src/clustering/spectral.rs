use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{symmetric_eigen_desc, DenseMatrix};
use crate::{Error, Result};

/// Seeded k-means restarts per spectral clustering call.
pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Rows of the normalized affinity's top-`p` eigenvectors, scaled to unit
/// length.
pub fn spectral_embedding(a: &DenseMatrix, p: usize) -> Result<Vec<Vec<f64>>> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::Dimension(format!("affinity must be square, got {:?}", a.shape())));
    }
    if p < 2 || p > n {
        return Err(Error::Config(format!("cluster count {p} must lie in 2..={n}")));
    }
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invariant("affinity must be finite and nonnegative".into()));
    }
    let degree: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    if degree.iter().all(|d| *d == 0.0) {
        return Err(Error::Degenerate("affinity matrix is identically zero".into()));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| if *d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let m = DenseMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]);
    let m = (&m + m.transpose()) * 0.5;
    let (_, vecs) = symmetric_eigen_desc(&m);
    Ok((0..n)
        .map(|i| {
            let row: Vec<f64> = (0..p).map(|k| vecs[(i, k)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect())
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(x, centers.last().unwrap()));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, x) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
                .expect("k >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .expect("n >= 1");
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(x, &l)| sq_dist(x, &centers[l])).sum();
    (labels, inertia)
}

/// Best-inertia k-means over `restarts` seeded k-means++ runs. Labels are
/// renumbered in order of first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    if points.len() < k || k == 0 {
        return Err(Error::Config(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let labels = best.expect("at least one restart").0;
    let mut order = Vec::new();
    let mut map = vec![usize::MAX; k];
    Ok(labels
        .into_iter()
        .map(|l| {
            if map[l] == usize::MAX {
                map[l] = order.len();
                order.push(l);
            }
            map[l]
        })
        .collect())
}

/// Normalized spectral clustering of a symmetric nonnegative affinity into
/// `p` clusters.
pub fn spectral_cluster(a: &DenseMatrix, p: usize, seed: u64) -> Result<Vec<usize>> {
    let emb = spectral_embedding(a, p)?;
    kmeans(&emb, p, KMEANS_RESTARTS, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::cluster_accuracy;

    fn blocks(sizes: &[usize], noise: f64, seed: u64) -> (DenseMatrix, Vec<usize>) {
        let n: usize = sizes.iter().sum();
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(p, &s)| std::iter::repeat_n(p, s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = if labels[i] == labels[j] { rng.random_range(0.5..1.0) } else { noise * rng.random_range(0.0..1.0) };
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        (a, labels)
    }

    #[test]
    fn disconnected_blocks_are_recovered() {
        let (a, truth) = blocks(&[6, 9], 0.0, 1);
        let pred = spectral_cluster(&a, 2, 0).unwrap();
        assert_eq!(cluster_accuracy(&pred, &truth).unwrap(), 1.0);
    }

    #[test]
    fn noisy_planted_partition() {
        for seed in 0..10 {
            let (a, truth) = blocks(&[20; 4], 0.05, seed);
            let pred = spectral_cluster(&a, 4, seed).unwrap();
            assert_eq!(cluster_accuracy(&pred, &truth).unwrap(), 1.0);
        }
    }

    #[test]
    fn duplicate_rows_share_a_cluster() {
        let (mut a, _) = blocks(&[5, 5], 0.1, 2);
        // Make sample 9 an exact copy of sample 8.
        for j in 0..10 {
            a[(9, j)] = a[(8, j)];
            a[(j, 9)] = a[(8, j)];
        }
        a[(8, 9)] = 1.0;
        a[(9, 8)] = 1.0;
        a[(9, 9)] = 0.0;
        a[(8, 8)] = 0.0;
        let pred = spectral_cluster(&a, 2, 3).unwrap();
        assert_eq!(pred[8], pred[9]);
    }

    #[test]
    fn permutation_invariance() {
        let (a, _) = blocks(&[7, 8, 6], 0.2, 4);
        let n = a.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 8 + 3) % n).collect();
        let pa = DenseMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
        let base = spectral_cluster(&a, 3, 1).unwrap();
        let moved = spectral_cluster(&pa, 3, 1).unwrap();
        let mapped: Vec<usize> = perm.iter().map(|&i| base[i]).collect();
        assert_eq!(cluster_accuracy(&moved, &mapped).unwrap(), 1.0);
    }

    #[test]
    fn zero_affinity_is_degenerate() {
        assert!(matches!(spectral_cluster(&DenseMatrix::zeros(4, 4), 2, 0), Err(Error::Degenerate(_))));
        assert!(spectral_cluster(&DenseMatrix::zeros(4, 4), 1, 0).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64 * 5.0 + (i as f64 * 0.37).sin(), (i as f64).cos()]).collect();
        assert_eq!(kmeans(&pts, 3, 5, 9).unwrap(), kmeans(&pts, 3, 5, 9).unwrap());
        let labels = kmeans(&pts, 3, 5, 9).unwrap();
        assert_eq!(labels[0], 0);
        for i in 0..30 {
            assert_eq!(labels[i], labels[i % 3]);
        }
    }
}
