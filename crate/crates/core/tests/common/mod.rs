//! Brute-force reference implementations and random-input builders shared by
//! the integration tests.

#![allow(dead_code)]

use gazefocus::synth::Rng;
use gazefocus::{FixationEvent, GazeSample};

/// One naive Ward step record: merged node ids (lower first), cost, size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveMerge {
    pub lo: usize,
    pub hi: usize,
    pub cost: f64,
    pub size: usize,
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for &m in members {
        for (ci, v) in c.iter_mut().zip(&points[m]) {
            *ci += v;
        }
    }
    for ci in c.iter_mut() {
        *ci /= members.len() as f64;
    }
    c
}

/// Ward agglomeration recomputing every pairwise merge cost from cluster
/// centroids at every step.
pub fn naive_ward(points: &[Vec<f64>]) -> Vec<NaiveMerge> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let cents: Vec<Vec<f64>> = clusters.iter().map(|(_, m)| centroid(points, m)).collect();
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (na, nb) = (clusters[a].1.len() as f64, clusters[b].1.len() as f64);
                let d2: f64 = cents[a].iter().zip(&cents[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                let cost = na * nb / (na + nb) * d2;
                let (lo, hi) = {
                    let (p, q) = (clusters[a].0, clusters[b].0);
                    (p.min(q), p.max(q))
                };
                let better = match best {
                    None => true,
                    Some((c, l, h, _, _)) => (cost, lo, hi) < (c, l, h),
                };
                if better {
                    best = Some((cost, lo, hi, a, b));
                }
            }
        }
        let (cost, lo, hi, a, b) = best.unwrap();
        let mut members = clusters[a].1.clone();
        members.extend(&clusters[b].1);
        merges.push(NaiveMerge {
            lo,
            hi,
            cost,
            size: members.len(),
        });
        clusters.remove(b);
        clusters.remove(a);
        clusters.push((n + step, members));
    }
    merges
}

/// I-DT by direct definition: from every candidate start, extend while the
/// extents of the whole window stay within the threshold.
pub fn naive_idt(gaze: &[GazeSample], threshold: f64, min_duration_us: i64) -> Vec<FixationEvent> {
    let n = gaze.len();
    let mut out = Vec::new();
    let mut lo = 0;
    while lo < n {
        if !gaze[lo].valid {
            lo += 1;
            continue;
        }
        let mut hi = lo;
        loop {
            let next = hi + 1;
            if next >= n || !gaze[next].valid {
                break;
            }
            let window = &gaze[lo..=next];
            let min_x = window.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
            let max_x = window.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max);
            let min_y = window.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
            let max_y = window.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
            if (max_x - min_x) + (max_y - min_y) > threshold {
                break;
            }
            hi = next;
        }
        if gaze[hi].ts_us - gaze[lo].ts_us >= min_duration_us {
            let w = &gaze[lo..=hi];
            let count = w.len() as f64;
            let min_x = w.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
            let max_x = w.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max);
            let min_y = w.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
            let max_y = w.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
            out.push(FixationEvent {
                start_us: w[0].ts_us,
                end_us: w[w.len() - 1].ts_us,
                cx: w.iter().map(|s| s.x).sum::<f64>() / count,
                cy: w.iter().map(|s| s.y).sum::<f64>() / count,
                dispersion: (max_x - min_x) + (max_y - min_y),
                sample_count: w.len(),
                target: gazefocus::Target::Unassigned,
                motion_valid: true,
            });
            lo = hi + 1;
        } else {
            lo += 1;
        }
    }
    out
}

/// Gaze stream of `len` samples alternating plateaus and jumps, with
/// irregular sample spacing and occasional invalid samples.
pub fn random_gaze(rng: &mut Rng, len: usize) -> Vec<GazeSample> {
    let period = rng.range(2_000.0, 16_000.0);
    let jitter = rng.range(0.5, 15.0);
    let invalid_rate = rng.range(0.0, 0.05);
    let mut out = Vec::with_capacity(len);
    let mut ts = rng.below(1_000_000) as i64;
    let (mut px, mut py) = (rng.range(0.0, 1280.0), rng.range(0.0, 960.0));
    let mut left_in_plateau = 0usize;
    for _ in 0..len {
        if left_in_plateau == 0 {
            left_in_plateau = 1 + rng.below(120);
            if rng.chance(0.7) {
                px = rng.range(0.0, 1280.0);
                py = rng.range(0.0, 960.0);
            }
        }
        left_in_plateau -= 1;
        out.push(GazeSample {
            ts_us: ts,
            x: px + rng.range(-jitter, jitter),
            y: py + rng.range(-jitter, jitter),
            valid: !rng.chance(invalid_rate),
        });
        ts += 1 + (period * rng.range(0.5, 1.5)) as i64;
    }
    out
}

pub fn random_points(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}
