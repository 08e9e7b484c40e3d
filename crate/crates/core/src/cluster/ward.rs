//! Ward agglomerative clustering via the Lance-Williams recurrence.
//!
//! Costs are increases in within-cluster sum of squares: merging clusters
//! `a` and `b` costs `|a||b| / (|a| + |b|) * ||c_a - c_b||^2`, so two single
//! points cost half their squared distance.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{squared_distance, Dendrogram, Merge};

/// Packed upper-triangular storage for pairwise costs.
struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    fn new(n: usize) -> Self {
        Condensed {
            n,
            data: vec![0.0; n * (n - 1) / 2],
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.data[k] = v;
    }
}

/// Ordering key of a candidate merge: cost, then lower node id, then higher node id.
#[derive(Clone, Copy)]
struct Key {
    cost: f64,
    lo: usize,
    hi: usize,
}

impl Key {
    fn new(cost: f64, a: usize, b: usize) -> Self {
        Key {
            cost,
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    fn cmp(&self, other: &Key) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

struct State {
    dist: Condensed,
    active: Vec<bool>,
    node: Vec<usize>,
    size: Vec<usize>,
    /// Cheapest partner slot per active slot.
    best: Vec<Option<(Key, usize)>>,
}

impl State {
    fn scan_row(&self, slot: usize) -> Option<(Key, usize)> {
        let mut best: Option<(Key, usize)> = None;
        for other in 0..self.active.len() {
            if other == slot || !self.active[other] {
                continue;
            }
            let key = Key::new(self.dist.get(slot, other), self.node[slot], self.node[other]);
            if best.map_or(true, |(b, _)| key.cmp(&b) == Ordering::Less) {
                best = Some((key, other));
            }
        }
        best
    }
}

/// Builds the full Ward dendrogram over `features`.
///
/// At every step the globally cheapest pair merges; ties go to the pair with
/// the smaller lower node id, then the smaller higher node id.
pub fn ward_linkage<V: AsRef<[f64]> + Sync>(features: &[V]) -> Result<Dendrogram> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("features", "ward linkage needs at least 2 vectors"));
    }
    let dim = features[0].as_ref().len();
    if let Some(bad) = features.iter().find(|f| f.as_ref().len() != dim) {
        return Err(Error::invalid(
            "features",
            format!("dimension mismatch: expected {dim}, got {}", bad.as_ref().len()),
        ));
    }

    let mut dist = Condensed::new(n);
    {
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let fi = features[i].as_ref();
                (i + 1..n)
                    .map(|j| 0.5 * squared_distance(fi, features[j].as_ref()))
                    .collect()
            })
            .collect();
        let mut k = 0;
        for row in rows {
            for v in row {
                dist.data[k] = v;
                k += 1;
            }
        }
    }

    let mut st = State {
        dist,
        active: vec![true; n],
        node: (0..n).collect(),
        size: vec![1; n],
        best: vec![None; n],
    };
    for slot in 0..n {
        st.best[slot] = st.scan_row(slot);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let (a, b, key) = (0..n)
            .filter(|&s| st.active[s])
            .filter_map(|s| st.best[s].map(|(k, p)| (s, p, k)))
            .min_by(|x, y| x.2.cmp(&y.2))
            .expect("at least two active clusters remain");
        let (keep, gone) = (a.min(b), a.max(b));
        let (sa, sb) = (st.size[keep], st.size[gone]);
        let d_ab = st.dist.get(keep, gone);

        merges.push(Merge {
            left: key.lo,
            right: key.hi,
            cost: key.cost,
            size: sa + sb,
        });

        st.active[gone] = false;
        st.best[gone] = None;
        for r in 0..n {
            if !st.active[r] || r == keep {
                continue;
            }
            let sr = st.size[r];
            let updated = ((sr + sa) as f64 * st.dist.get(r, keep)
                + (sr + sb) as f64 * st.dist.get(r, gone)
                - sr as f64 * d_ab)
                / (sr + sa + sb) as f64;
            st.dist.set(r, keep, updated.max(0.0));
        }
        st.size[keep] = sa + sb;
        st.node[keep] = n + step;

        st.best[keep] = st.scan_row(keep);
        for r in 0..n {
            if !st.active[r] || r == keep {
                continue;
            }
            match st.best[r] {
                Some((_, p)) if p == keep || p == gone => st.best[r] = st.scan_row(r),
                Some((cached, _)) => {
                    let key = Key::new(st.dist.get(r, keep), st.node[r], st.node[keep]);
                    if key.cmp(&cached) == Ordering::Less {
                        st.best[r] = Some((key, keep));
                    }
                }
                None => st.best[r] = st.scan_row(r),
            }
        }
    }

    Dendrogram::new(n, merges)
}

/// Flat clustering obtained by undoing the last `k - 1` merges.
///
/// Labels are numbered in order of each cluster's smallest leaf index.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.leaves();
    if k < 1 || k > n {
        return Err(Error::invalid(
            "k",
            format!("must be in [1, {n}] for a dendrogram with {n} leaves (got {k})"),
        ));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in dendrogram.merges().iter().take(n - k).enumerate() {
        let node = n + step;
        let l = find(&mut parent, m.left);
        let r = find(&mut parent, m.right);
        parent[l] = node;
        parent[r] = node;
    }
    let mut label_of_root = std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = label_of_root.len();
        labels.push(*label_of_root.entry(root).or_insert(next));
    }
    Ok(labels)
}
