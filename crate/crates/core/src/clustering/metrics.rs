use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clustering quality against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub ari: f64,
    pub nmi: f64,
}

impl MetricSet {
    pub fn score(pred: &[usize], truth: &[usize]) -> Result<Self> {
        let agreement = ari_nmi(pred, truth)?;
        Ok(MetricSet {
            acc: cluster_accuracy(pred, truth)?,
            ari: agreement.ari,
            nmi: agreement.nmi,
        })
    }

    /// Component-wise mean.
    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        let k = sets.len().max(1) as f64;
        MetricSet {
            acc: sets.iter().map(|m| m.acc).sum::<f64>() / k,
            ari: sets.iter().map(|m| m.ari).sum::<f64>() / k,
            nmi: sets.iter().map(|m| m.nmi).sum::<f64>() / k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agreement {
    pub ari: f64,
    pub nmi: f64,
    /// Ground truth has a single cluster, so NMI is undefined and reported as 0.
    pub nmi_degenerate: bool,
}

/// Maximum-weight perfect matching on a square weight matrix (Hungarian
/// method, O(k³)). Returns `assignment[row] = column`.
pub fn hungarian_max(weights: &[Vec<f64>]) -> Vec<usize> {
    let k = weights.len();
    if k == 0 {
        return Vec::new();
    }
    // Minimise negated weights with 1-based potentials.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; k];
    for j in 1..=k {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Dimension("empty label vectors".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!("{} predicted labels, {} true labels", pred.len(), truth.len())));
    }
    Ok(())
}

/// Dense relabelling to `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<usize>>, usize, usize) {
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (a, b) in p.iter().zip(&t) {
        table[*a][*b] += 1;
    }
    (table, kp, kt)
}

/// Fraction of samples correctly labelled under the best one-to-one matching
/// of predicted to true clusters.
pub fn cluster_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let (table, kp, kt) = contingency(pred, truth);
    let k = kp.max(kt);
    let weights: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i < kp && j < kt { table[i][j] as f64 } else { 0.0 }).collect())
        .collect();
    let assignment = hungarian_max(&weights);
    let matched: f64 = assignment.iter().enumerate().map(|(i, &j)| weights[i][j]).sum();
    Ok(matched / pred.len() as f64)
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index and arithmetic-mean normalized mutual information.
pub fn ari_nmi(pred: &[usize], truth: &[usize]) -> Result<Agreement> {
    check_pair(pred, truth)?;
    let n = pred.len();
    let (table, kp, kt) = contingency(pred, truth);
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();

    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max_index = 0.5 * (sum_a + sum_b);
    let ari = if max_index == expected {
        // Both partitions trivial: identical partitions agree perfectly.
        if kp == kt {
            1.0
        } else {
            0.0
        }
    } else {
        (index - expected) / (max_index - expected)
    };

    let nf = n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&rows);
    let h_truth = entropy(&cols);
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (nf * c / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let nmi_degenerate = kt == 1;
    let denom = 0.5 * (h_pred + h_truth);
    let nmi = if nmi_degenerate || denom <= 0.0 {
        0.0
    } else {
        (mi / denom).clamp(0.0, 1.0)
    };
    Ok(Agreement {
        ari,
        nmi,
        nmi_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Best accuracy over every label permutation.
    fn brute_acc(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(k)
            .iter()
            .map(|perm| pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count() as f64 / pred.len() as f64)
            .fold(0.0, f64::max)
    }

    #[test]
    fn accuracy_cases() {
        let truth = [0, 0, 1, 1];
        assert_eq!(cluster_accuracy(&truth, &truth).unwrap(), 1.0);
        assert_eq!(cluster_accuracy(&[1, 1, 0, 0], &truth).unwrap(), 1.0);
        assert_eq!(cluster_accuracy(&[0, 1, 0, 1], &truth).unwrap(), 0.5);
        assert!(cluster_accuracy(&[], &[]).is_err());
        assert!(cluster_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(5..30);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            // Relabel so both use 0..4 directly in the brute force.
            let acc = cluster_accuracy(&pred, &truth).unwrap();
            assert!((acc - brute_acc(&pred, &truth, 4)).abs() < 1e-12);
        }
    }

    #[test]
    fn agreement_identical_and_hand_case() {
        let a = ari_nmi(&[0, 0, 1, 1, 2], &[3, 3, 1, 1, 0]).unwrap();
        assert!((a.ari - 1.0).abs() < 1e-12 && (a.nmi - 1.0).abs() < 1e-12);
        // Contingency [[1,1],[1,1]]: index 0, expected 2*2/6, max 2.
        let b = ari_nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        let expected = 4.0 / 6.0;
        assert!((b.ari - (0.0 - expected) / (2.0 - expected)).abs() < 1e-12);
        assert!(b.nmi.abs() < 1e-12);
    }

    #[test]
    fn single_cluster_truth_is_flagged() {
        let a = ari_nmi(&[0, 1, 0], &[2, 2, 2]).unwrap();
        assert!(a.nmi_degenerate);
        assert_eq!(a.nmi, 0.0);
    }

    #[test]
    fn independent_labels_have_small_ari() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<usize> = (0..1000).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..1000).map(|_| rng.random_range(0..4)).collect();
        assert!(ari_nmi(&a, &b).unwrap().ari.abs() < 0.1);
    }

    #[test]
    fn nmi_matches_direct_formula() {
        let pred = [0, 0, 1, 1, 1, 2];
        let truth = [0, 0, 0, 1, 1, 1];
        // Joint counts: (0,0)=2 (1,0)=1 (1,1)=2 (2,1)=1.
        let n = 6.0f64;
        let mi = 2.0 / n * (n * 2.0 / (2.0 * 3.0)).ln()
            + 1.0 / n * (n * 1.0 / (3.0 * 3.0)).ln()
            + 2.0 / n * (n * 2.0 / (3.0 * 3.0)).ln()
            + 1.0 / n * (n * 1.0 / (1.0 * 3.0)).ln();
        let h = |ps: &[f64]| -ps.iter().map(|p| p * p.ln()).sum::<f64>();
        let hp = h(&[2.0 / n, 3.0 / n, 1.0 / n]);
        let ht = h(&[0.5, 0.5]);
        let got = ari_nmi(&pred, &truth).unwrap().nmi;
        assert!((got - mi / (0.5 * (hp + ht))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn accuracy_is_symmetric_and_bounded(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..40)
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = cluster_accuracy(&p, &t).unwrap();
            let b = cluster_accuracy(&t, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            let g = ari_nmi(&p, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&g.nmi));
            prop_assert!(g.ari >= -1.0 && g.ari <= 1.0 + 1e-12);
        }

        #[test]
        fn accuracy_ignores_relabelling(labels in proptest::collection::vec(0usize..4, 1..30)) {
            let relabel = [2usize, 0, 3, 1];
            let pred: Vec<usize> = labels.iter().map(|l| relabel[*l]).collect();
            prop_assert_eq!(cluster_accuracy(&pred, &labels).unwrap(), 1.0);
        }
    }
}
