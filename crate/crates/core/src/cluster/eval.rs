//! Label-permutation-invariant evaluation of identity predictions.

use crate::error::{Error, Result};

/// Square count matrix: rows are true labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|row| row.len() != k) {
            return Err(Error::invalid("counts", "confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            total => self.trace() as f64 / total as f64,
        }
    }
}

fn label_space(predicted: &[usize], truth: &[usize]) -> Result<usize> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(
            "predicted",
            format!(
                "length mismatch: {} predictions vs {} truth labels",
                predicted.len(),
                truth.len()
            ),
        ));
    }
    Ok(predicted
        .iter()
        .chain(truth)
        .copied()
        .max()
        .map_or(0, |m| m + 1))
}

fn overlap(predicted: &[usize], truth: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        counts[t][p] += 1;
    }
    counts
}

/// Confusion matrix with predicted labels taken at face value.
pub fn raw_confusion_matrix(predicted: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    let k = label_space(predicted, truth)?;
    ConfusionMatrix::from_counts(overlap(predicted, truth, k))
}

/// Confusion matrix after renaming predicted labels by maximum-overlap
/// matching against the truth labels.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    let k = label_space(predicted, truth)?;
    let raw = overlap(predicted, truth, k);
    let mapping = max_overlap_assignment(&raw);
    let mut counts = vec![vec![0u64; k]; k];
    for (t, row) in raw.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            counts[t][mapping[p]] += c;
        }
    }
    ConfusionMatrix::from_counts(counts)
}

/// For a square `overlap[truth][predicted]` matrix, returns the permutation
/// `mapping[predicted] = truth` that maximizes the matched total.
pub fn max_overlap_assignment(overlap: &[Vec<u64>]) -> Vec<usize> {
    let n = overlap.len();
    if n == 0 {
        return Vec::new();
    }
    let max = overlap.iter().flatten().copied().max().unwrap_or(0) as i128;
    // Rows are predicted labels, columns truth labels; cost = max - overlap.
    let cost = |p: usize, t: usize| max - overlap[t][p] as i128;
    let row_of_col = hungarian(n, cost);
    let mut mapping = vec![0; n];
    for (t, &p) in row_of_col.iter().enumerate() {
        mapping[p] = t;
    }
    mapping
}

/// Minimum-cost perfect assignment on an `n x n` cost function.
/// Returns, for each column, the assigned row.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> i128) -> Vec<usize> {
    const INF: i128 = i128::MAX / 4;
    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    (1..=n).map(|j| p[j] - 1).collect()
}
