//! External clustering metrics: Hungarian-aligned accuracy, adjusted Rand
//! index and normalized mutual information.

use crate::error::{Error, Result};

/// Joint label counts between a predicted and a true partition.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    /// counts[i][j] = number of samples with pred-id i and truth-id j
    pub counts: Vec<Vec<usize>>,
    pub row_marginals: Vec<usize>,
    pub col_marginals: Vec<usize>,
    pub n: usize,
}

impl ContingencyTable {
    pub fn build(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::invalid(
                "contingency",
                format!("length mismatch: pred {} vs truth {}", pred.len(), truth.len()),
            ));
        }
        // Compact arbitrary ids to dense ranges in first-appearance order.
        let compact = |labels: &[usize]| -> (Vec<usize>, usize) {
            let mut map = std::collections::HashMap::new();
            let mut out = Vec::with_capacity(labels.len());
            for &l in labels {
                let next = map.len();
                out.push(*map.entry(l).or_insert(next));
            }
            (out, map.len())
        };
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0usize; kt]; kp];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let row_marginals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let mut col_marginals = vec![0usize; kt];
        for r in &counts {
            for (c, v) in col_marginals.iter_mut().zip(r) {
                *c += v;
            }
        }
        Ok(ContingencyTable {
            counts,
            row_marginals,
            col_marginals,
            n: pred.len(),
        })
    }
}

/// Optimal assignment for a rectangular cost matrix.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// For each row, the assigned column (None when R > C and the row lost).
    pub assignment: Vec<Option<usize>>,
    pub total_cost: f64,
}

/// Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3)).
/// Rectangular inputs are padded internally to square with zeros.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    if rows == 0 || cost[0].is_empty() {
        return Err(Error::invalid("hungarian", "empty cost matrix"));
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("hungarian", "ragged cost matrix"));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "hungarian" });
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };

    // 1-indexed potentials; p[j] = row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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

    let mut assignment = vec![None; rows];
    let mut total_cost = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            assignment[i - 1] = Some(j - 1);
            total_cost += cost[i - 1][j - 1];
        }
    }
    Ok(Assignment {
        assignment,
        total_cost,
    })
}

/// Hungarian-aligned clustering accuracy in [0, 1]. Invariant to any
/// relabeling of either argument.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("clustering_accuracy", "empty input"));
    }
    let table = ContingencyTable::build(pred, truth)?;
    // Maximize matched counts == minimize negated counts.
    let cost: Vec<Vec<f64>> = table
        .counts
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let a = hungarian(&cost)?;
    Ok(-a.total_cost / table.n as f64)
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Pair-counting adjusted Rand index in [-1, 1], symmetric in its arguments.
pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::invalid("adjusted_rand_index", "need at least 2 samples"));
    }
    let table = ContingencyTable::build(pred, truth)?;
    let index: f64 = table
        .counts
        .iter()
        .flatten()
        .map(|&c| comb2(c))
        .sum();
    let sum_rows: f64 = table.row_marginals.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = table.col_marginals.iter().map(|&c| comb2(c)).sum();
    let total = comb2(table.n);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() == 0.0 {
        // Both partitions trivially agree (e.g. both single-cluster).
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

fn entropy(marginals: &[usize], n: usize) -> f64 {
    let n = n as f64;
    marginals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies; natural log internally. When both partitions are a single
/// cluster the ratio 0/0 is defined as 1.
pub fn normalized_mutual_info(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("normalized_mutual_info", "empty input"));
    }
    let table = ContingencyTable::build(pred, truth)?;
    let n = table.n as f64;
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij
                * (n * c as f64
                    / (table.row_marginals[i] as f64 * table.col_marginals[j] as f64))
                    .ln();
        }
    }
    let h_mean = 0.5 * (entropy(&table.row_marginals, table.n) + entropy(&table.col_marginals, table.n));
    if h_mean == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / h_mean).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // ── Independent oracles ──────────────────────────────────────────

    /// Brute-force minimum assignment cost over all permutations (square).
    fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
        fn permute(remaining: &mut Vec<usize>, prefix: &mut Vec<usize>, best: &mut f64, cost: &[Vec<f64>]) {
            if remaining.is_empty() {
                let total: f64 = prefix.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                if total < *best {
                    *best = total;
                }
                return;
            }
            for k in 0..remaining.len() {
                let j = remaining.remove(k);
                prefix.push(j);
                permute(remaining, prefix, best, cost);
                prefix.pop();
                remaining.insert(k, j);
            }
        }
        let n = cost.len();
        let mut best = f64::INFINITY;
        permute(&mut (0..n).collect(), &mut Vec::new(), &mut best, cost);
        best
    }

    /// O(N^2) pair-counting ARI straight from the definition.
    fn brute_force_ari(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len();
        let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_p = pred[i] == pred[j];
                let same_t = truth[i] == truth[j];
                match (same_p, same_t) {
                    (true, true) => a += 1.0,
                    (true, false) => b += 1.0,
                    (false, true) => c += 1.0,
                    (false, false) => d += 1.0,
                }
            }
        }
        let total = a + b + c + d;
        let expected = (a + b) * (a + c) / total;
        let max_index = 0.5 * ((a + b) + (a + c));
        if (max_index - expected).abs() == 0.0 {
            return 1.0;
        }
        (a - expected) / (max_index - expected)
    }

    /// Plug-in MI/entropy computation from scratch.
    fn direct_nmi(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len() as f64;
        let mut joint = std::collections::HashMap::new();
        let mut pm = std::collections::HashMap::new();
        let mut tm = std::collections::HashMap::new();
        for (&p, &t) in pred.iter().zip(truth) {
            *joint.entry((p, t)).or_insert(0.0) += 1.0;
            *pm.entry(p).or_insert(0.0) += 1.0;
            *tm.entry(t).or_insert(0.0) += 1.0;
        }
        let mi: f64 = joint
            .iter()
            .map(|(&(p, t), &c)| (c / n) * ((n * c) / (pm[&p] * tm[&t])).ln())
            .sum();
        let h = |m: &std::collections::HashMap<usize, f64>| -> f64 {
            m.values().map(|&c| -(c / n) * (c / n).ln()).sum()
        };
        let hm = 0.5 * (h(&pm) + h(&tm));
        if hm == 0.0 {
            1.0
        } else {
            mi / hm
        }
    }

    // ── Hungarian ────────────────────────────────────────────────────

    #[test]
    fn hungarian_identity_favoring_cost() {
        let cost = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.total_cost, 0.0);
        assert_eq!(a.assignment, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn hungarian_two_by_two() {
        let cost = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.total_cost, 2.0);
        assert_eq!(a.assignment, vec![Some(0), Some(1)]);
    }

    #[test]
    fn hungarian_empty_rejected() {
        assert!(hungarian(&[]).is_err());
        assert!(hungarian(&[vec![]]).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force_up_to_6x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = rng.gen_range(2..=6);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0..100) as f64).collect())
                .collect();
            let got = hungarian(&cost).unwrap().total_cost;
            let want = brute_force_assignment(&cost);
            assert_eq!(got, want, "trial {trial}, matrix {cost:?}");
        }
    }

    #[test]
    fn hungarian_five_by_five_integer_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cost: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..5).map(|_| rng.gen_range(0..50) as f64).collect())
            .collect();
        assert_eq!(
            hungarian(&cost).unwrap().total_cost,
            brute_force_assignment(&cost)
        );
    }

    #[test]
    fn hungarian_rectangular_pads_with_zeros() {
        // 2x3: one column goes unused.
        let cost = vec![vec![5.0, 1.0, 9.0], vec![1.0, 5.0, 9.0]];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.total_cost, 2.0);
        assert_eq!(a.assignment, vec![Some(1), Some(0)]);
        // 3x2: one row goes unassigned.
        let cost = vec![vec![5.0, 1.0], vec![1.0, 5.0], vec![10.0, 10.0]];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.total_cost, 2.0);
        assert_eq!(a.assignment, vec![Some(1), Some(0), None]);
    }

    #[test]
    fn hungarian_handles_negative_costs() {
        let cost = vec![vec![-5.0, 0.0], vec![0.0, -5.0]];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.total_cost, -10.0);
    }

    // ── Accuracy ─────────────────────────────────────────────────────

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        // Relabeling invariance.
        assert_eq!(clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        // Brute force over label maps: best match is 2 of 3.
        let acc = clustering_accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_rejects_length_mismatch() {
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn accuracy_one_iff_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(4..20);
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            // A relabeling bijection scores exactly 1.
            let relabel = |l: usize| (l * 7 + 3) % 11;
            let pred: Vec<usize> = truth.iter().map(|&l| relabel(l)).collect();
            assert_eq!(clustering_accuracy(&pred, &truth).unwrap(), 1.0);
            // Corrupting one sample (when that breaks the bijection) drops below 1.
            if truth.iter().filter(|&&t| t == truth[0]).count() > 1 {
                let mut bad = pred.clone();
                bad[0] = relabel(truth[0]) + 100;
                assert!(clustering_accuracy(&bad, &truth).unwrap() < 1.0);
            }
        }
    }

    // ── ARI ──────────────────────────────────────────────────────────

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        // Crossed partition: all four cells hold one sample.
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((ari - (-0.5)).abs() < 1e-15, "got {ari}");
    }

    #[test]
    fn ari_matches_pair_counting_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let pred: Vec<usize> = (0..10).map(|_| rng.gen_range(0..4)).collect();
            let truth: Vec<usize> = (0..10).map(|_| rng.gen_range(0..3)).collect();
            let got = adjusted_rand_index(&pred, &truth).unwrap();
            let want = brute_force_ari(&pred, &truth);
            assert!((got - want).abs() < 1e-9, "pred {pred:?} truth {truth:?}");
        }
    }

    #[test]
    fn ari_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let a: Vec<usize> = (0..12).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..12).map(|_| rng.gen_range(0..4)).collect();
            assert_eq!(
                adjusted_rand_index(&a, &b).unwrap(),
                adjusted_rand_index(&b, &a).unwrap()
            );
        }
    }

    // ── NMI ──────────────────────────────────────────────────────────

    #[test]
    fn nmi_examples() {
        assert_eq!(
            normalized_mutual_info(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        // Uniform contingency: MI = 0.
        assert_eq!(
            normalized_mutual_info(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(),
            0.0
        );
        // Both single-cluster: 0/0 defined as 1.
        assert_eq!(normalized_mutual_info(&[0, 0], &[5, 5]).unwrap(), 1.0);
        // One single-cluster, one not: 0.
        assert_eq!(normalized_mutual_info(&[0, 0], &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let pred: Vec<usize> = (0..10).map(|_| rng.gen_range(0..4)).collect();
            let truth: Vec<usize> = (0..10).map(|_| rng.gen_range(0..3)).collect();
            let got = normalized_mutual_info(&pred, &truth).unwrap();
            let want = direct_nmi(&pred, &truth).clamp(0.0, 1.0);
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..30 {
            let pred: Vec<usize> = (0..15).map(|_| rng.gen_range(0..4)).collect();
            let truth: Vec<usize> = (0..15).map(|_| rng.gen_range(0..4)).collect();
            let relabeled: Vec<usize> = pred.iter().map(|&l| (l * 13 + 5) % 17).collect();
            assert!(
                (adjusted_rand_index(&pred, &truth).unwrap()
                    - adjusted_rand_index(&relabeled, &truth).unwrap())
                .abs()
                    < 1e-12
            );
            assert!(
                (normalized_mutual_info(&pred, &truth).unwrap()
                    - normalized_mutual_info(&relabeled, &truth).unwrap())
                .abs()
                    < 1e-12
            );
            assert!(
                (clustering_accuracy(&pred, &truth).unwrap()
                    - clustering_accuracy(&relabeled, &truth).unwrap())
                .abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn contingency_marginals_sum_to_n() {
        let t = ContingencyTable::build(&[0, 1, 1, 2], &[0, 0, 1, 1]).unwrap();
        assert_eq!(t.n, 4);
        assert_eq!(t.row_marginals.iter().sum::<usize>(), 4);
        assert_eq!(t.col_marginals.iter().sum::<usize>(), 4);
    }
}
