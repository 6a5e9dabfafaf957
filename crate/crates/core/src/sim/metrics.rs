//! Estimation, prediction and clustering metrics.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalMoeError};
use crate::expert::Expert;
use crate::model::{Dataset, MoeModel};

/// Largest label count for which class error searches all permutations.
pub const EXHAUSTIVE_PERMUTATION_MAX_K: usize = 6;

/// Error of one scalar parameter in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterError {
    pub name: String,
    pub estimate: f64,
    pub truth: f64,
    pub bias: f64,
    pub mse: f64,
}

/// Clustering agreement between two labelings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub ari: f64,
    pub class_err: f64,
    pub accuracy: f64,
}

fn check_shape<A: Expert, B: Expert>(a: &MoeModel<A>, b: &MoeModel<B>) -> Result<()> {
    if (a.k(), a.p(), a.q()) != (b.k(), b.p(), b.q()) {
        return Err(SalMoeError::DimensionMismatch(format!(
            "models differ in (K, p, q): ({}, {}, {}) vs ({}, {}, {})",
            a.k(),
            a.p(),
            a.q(),
            b.k(),
            b.p(),
            b.q()
        )));
    }
    Ok(())
}

fn expert_vector<E: Expert>(e: &E) -> Vec<f64> {
    e.beta()
        .iter()
        .copied()
        .chain(e.shape_params().into_iter().map(|(_, v)| v))
        .collect()
}

/// Permutes `fitted` to the component order of `truth` that minimizes the
/// summed squared distance between expert parameters. Returns the aligned
/// model and the permutation (`new j ← old perm[j]`).
pub fn align_components<E: Expert>(
    fitted: &MoeModel<E>,
    truth: &MoeModel<E>,
) -> Result<(MoeModel<E>, Vec<usize>)> {
    check_shape(fitted, truth)?;
    let k = fitted.k();
    let fv: Vec<Vec<f64>> = fitted.experts().iter().map(expert_vector).collect();
    let tv: Vec<Vec<f64>> = truth.experts().iter().map(expert_vector).collect();
    let cost = |j: usize, i: usize| -> f64 {
        fv[i].iter().zip(&tv[j]).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let perm = if k <= EXHAUSTIVE_PERMUTATION_MAX_K {
        (0..k)
            .permutations(k)
            .min_by(|a, b| {
                let ca: f64 = a.iter().enumerate().map(|(j, &i)| cost(j, i)).sum();
                let cb: f64 = b.iter().enumerate().map(|(j, &i)| cost(j, i)).sum();
                ca.partial_cmp(&cb).unwrap()
            })
            .unwrap()
    } else {
        greedy_assignment(k, k, |j, i| -cost(j, i))
    };
    Ok((fitted.permuted(&perm)?, perm))
}

/// Per-parameter bias and squared error of `fitted` against `truth`, after
/// aligning components.
pub fn parameter_metrics<E: Expert>(
    fitted: &MoeModel<E>,
    truth: &MoeModel<E>,
) -> Result<Vec<ParameterError>> {
    let (aligned, _) = align_components(fitted, truth)?;
    Ok(aligned
        .named_parameters()
        .into_iter()
        .zip(truth.named_parameters())
        .map(|((name, estimate), (_, t))| ParameterError {
            name,
            estimate,
            truth: t,
            bias: estimate - t,
            mse: (estimate - t).powi(2),
        })
        .collect())
}

/// Root mean squared difference of the two models' mean functions over the rows of `d`.
pub fn rmse_mean_function<A: Expert, B: Expert>(
    fitted: &MoeModel<A>,
    truth: &MoeModel<B>,
    d: &Dataset,
) -> Result<f64> {
    rmse_against(fitted, &truth.predict_means(d)?, d)
}

/// As [`rmse_mean_function`] with precomputed true means.
pub fn rmse_against<A: Expert>(
    fitted: &MoeModel<A>,
    true_means: &[f64],
    d: &Dataset,
) -> Result<f64> {
    if true_means.len() != d.n() {
        return Err(SalMoeError::DimensionMismatch(
            "true mean vector length differs from n".into(),
        ));
    }
    let fm = fitted.predict_means(d)?;
    let ss: f64 = fm
        .iter()
        .zip(true_means)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((ss / d.n() as f64).sqrt())
}

fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<u64>>, Vec<usize>, Vec<usize>) {
    let la: Vec<usize> = a.iter().copied().sorted().dedup().collect();
    let lb: Vec<usize> = b.iter().copied().sorted().dedup().collect();
    let mut table = vec![vec![0u64; lb.len()]; la.len()];
    for (x, y) in a.iter().zip(b) {
        let i = la.binary_search(x).unwrap();
        let j = lb.binary_search(y).unwrap();
        table[i][j] += 1;
    }
    (table, la, lb)
}

fn choose2(v: u64) -> f64 {
    let v = v as f64;
    v * (v - 1.0) / 2.0
}

/// Adjusted Rand index (pair-counting, Hubert–Arabie adjustment).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SalMoeError::DimensionMismatch(
            "label vectors differ in length".into(),
        ));
    }
    if a.is_empty() {
        return Err(SalMoeError::InvalidData("label vectors are empty".into()));
    }
    let (table, _, _) = contingency(a, b);
    let sum_ij: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols = table[0].len();
    let sum_b: f64 = (0..cols)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both partitions trivial (all singletons or one block).
        return Ok(if sum_a == sum_b { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max - expected))
}

/// Greedy maximum-weight matching of rows to columns; returns, for each row, its column.
fn greedy_assignment(rows: usize, cols: usize, weight: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut pairs: Vec<(usize, usize)> = (0..rows).cartesian_product(0..cols).collect();
    pairs.sort_by(|&(a, b), &(c, d)| weight(c, d).partial_cmp(&weight(a, b)).unwrap());
    let mut row_to = vec![usize::MAX; rows];
    let mut used = vec![false; cols];
    for (r, c) in pairs {
        if row_to[r] == usize::MAX && !used[c] {
            row_to[r] = c;
            used[c] = true;
        }
    }
    // Unmatched rows (more rows than columns) take the remaining indices.
    let mut spare = (cols..).take(rows);
    for v in &mut row_to {
        if *v == usize::MAX {
            *v = spare.next().unwrap();
        }
    }
    row_to
}

/// Largest number of agreements over one-to-one relabelings of `b`.
fn best_matching(table: &[Vec<u64>]) -> u64 {
    let ra = table.len();
    let rb = table[0].len();
    let m = ra.max(rb);
    let at = |i: usize, j: usize| if i < ra && j < rb { table[i][j] } else { 0 };
    if m <= EXHAUSTIVE_PERMUTATION_MAX_K {
        (0..m)
            .permutations(m)
            .map(|p| p.iter().enumerate().map(|(j, &i)| at(i, j)).sum::<u64>())
            .max()
            .unwrap()
    } else {
        let assign = greedy_assignment(rb, ra, |j, i| at(i, j) as f64);
        assign.iter().enumerate().map(|(j, &i)| at(i, j)).sum()
    }
}

/// ARI, permutation-minimized misclassification rate and accuracy.
pub fn clustering_metrics(z_true: &[usize], z_hat: &[usize]) -> Result<ClusterMetrics> {
    let ari = adjusted_rand_index(z_true, z_hat)?;
    let (table, _, _) = contingency(z_true, z_hat);
    let agree = best_matching(&table) as f64;
    let class_err = 1.0 - agree / z_true.len() as f64;
    Ok(ClusterMetrics {
        ari,
        class_err,
        accuracy: 1.0 - class_err,
    })
}

/// Permutation `perm` (new `j` ← old `perm[j]`) that best maps `z_hat`
/// (1-based, labels in `1..=k`) onto `z_ref`.
pub fn label_alignment(z_ref: &[usize], z_hat: &[usize], k: usize) -> Vec<usize> {
    let mut table = vec![vec![0u64; k]; k];
    for (&r, &h) in z_ref.iter().zip(z_hat) {
        if (1..=k).contains(&r) && (1..=k).contains(&h) {
            table[r - 1][h - 1] += 1;
        }
    }
    if k <= EXHAUSTIVE_PERMUTATION_MAX_K {
        (0..k)
            .permutations(k)
            .max_by_key(|p| {
                (
                    p.iter().enumerate().map(|(j, &i)| table[j][i]).sum::<u64>(),
                    std::cmp::Reverse(p.clone()),
                )
            })
            .unwrap()
    } else {
        greedy_assignment(k, k, |j, i| table[j][i] as f64)
    }
}

/// Mean of a slice (NaN when empty).
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median of a slice (NaN when empty).
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let s: Vec<f64> = v
        .iter()
        .copied()
        .sorted_by(|a, b| a.partial_cmp(b).unwrap())
        .collect();
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}
