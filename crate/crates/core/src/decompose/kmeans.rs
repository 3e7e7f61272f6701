//! Two-cluster k-means. Small inputs are solved exactly by enumerating
//! partitions; larger ones run Lloyd iterations from k-means++ seeds, polish
//! with single-point transfers and keep the best of several restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DecomposeError;
use crate::embedding::{squared_distance, Embedding};

pub const MAX_ITERATIONS: usize = 100;
pub const RESTARTS: u64 = 8;
/// Inputs up to this size are partitioned by exhaustive search instead.
pub const EXACT_MAX_POINTS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cluster {
    A,
    B,
}

impl Cluster {
    pub fn other(self) -> Cluster {
        match self {
            Cluster::A => Cluster::B,
            Cluster::B => Cluster::A,
        }
    }

    fn slot(self) -> usize {
        match self {
            Cluster::A => 0,
            Cluster::B => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans2 {
    pub assignment: Vec<Cluster>,
    pub centroids: [Embedding; 2],
    /// Within-cluster sum of squared distances.
    pub sse: f64,
}

impl KMeans2 {
    pub fn centroid(&self, c: Cluster) -> &Embedding {
        &self.centroids[c.slot()]
    }

    /// Same partition with the A/B labels exchanged.
    pub fn relabeled(self) -> KMeans2 {
        let [a, b] = self.centroids;
        KMeans2 {
            assignment: self.assignment.into_iter().map(Cluster::other).collect(),
            centroids: [b, a],
            sse: self.sse,
        }
    }
}

pub fn kmeans2(points: &[Embedding], rng_seed: u64) -> Result<KMeans2, DecomposeError> {
    if points.len() < 2 {
        return Err(DecomposeError::DegenerateInput(format!(
            "k-means needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].dim();
    for p in points {
        p.check_dim(dim)?;
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(DecomposeError::DegenerateInput("all points are identical".into()));
    }
    let raw: Vec<&[f64]> = points.iter().map(Embedding::as_slice).collect();

    if raw.len() <= EXACT_MAX_POINTS {
        let (assignment, [ca, cb], sse) = exhaustive(&raw);
        return Ok(KMeans2 {
            assignment,
            centroids: [Embedding::new(ca)?, Embedding::new(cb)?],
            sse,
        });
    }

    let runs: Vec<(Vec<Cluster>, [Vec<f64>; 2], f64)> = (0..RESTARTS)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(restart);
            let seeds = plus_plus_seeds(&raw, &mut rng);
            let (assignment, centroids, _) = lloyd(&raw, seeds);
            transfer_refine(&raw, assignment, centroids)
        })
        .collect();

    // Lowest SSE wins; the earliest restart wins ties.
    let (assignment, centroids, sse) = runs
        .into_iter()
        .reduce(|best, run| if run.2 < best.2 { run } else { best })
        .expect("at least one restart");
    let [ca, cb] = centroids;
    Ok(KMeans2 {
        assignment,
        centroids: [Embedding::new(ca)?, Embedding::new(cb)?],
        sse,
    })
}

fn plus_plus_seeds(points: &[&[f64]], rng: &mut ChaCha8Rng) -> [Vec<f64>; 2] {
    let first = rng.random_range(0..points.len());
    let weights: Vec<f64> = points.iter().map(|p| squared_distance(p, points[first])).collect();
    let total: f64 = weights.iter().sum();
    // total > 0 because the points are not all identical.
    let mut target = rng.random::<f64>() * total;
    let mut second = points.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        if target < *w {
            second = i;
            break;
        }
        target -= w;
    }
    if weights[second] <= 0.0 {
        second = weights.iter().rposition(|w| *w > 0.0).expect("a distinct point exists");
    }
    [points[first].to_vec(), points[second].to_vec()]
}

fn nearest(p: &[f64], centroids: &[Vec<f64>; 2]) -> Cluster {
    let da = squared_distance(p, &centroids[0]);
    let db = squared_distance(p, &centroids[1]);
    if db < da {
        Cluster::B
    } else {
        Cluster::A
    }
}

fn lloyd(points: &[&[f64]], mut centroids: [Vec<f64>; 2]) -> (Vec<Cluster>, [Vec<f64>; 2], f64) {
    let dim = points[0].len();
    let mut assignment: Vec<Cluster> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..MAX_ITERATIONS {
        ensure_both_populated(points, &mut assignment, &centroids);
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (p, c) in points.iter().zip(&assignment) {
            counts[c.slot()] += 1;
            for (s, v) in sums[c.slot()].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for k in 0..2 {
            let inv = 1.0 / counts[k] as f64;
            centroids[k] = sums[k].iter().map(|s| s * inv).collect();
        }
        let next: Vec<Cluster> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    ensure_both_populated(points, &mut assignment, &centroids);
    let sse = points
        .iter()
        .zip(&assignment)
        .map(|(p, c)| squared_distance(p, &centroids[c.slot()]))
        .sum();
    (assignment, centroids, sse)
}

/// Best of all `2^(n−1) − 1` two-group partitions; point 0 stays in A and the
/// first partition found wins ties.
fn exhaustive(points: &[&[f64]]) -> (Vec<Cluster>, [Vec<f64>; 2], f64) {
    let n = points.len();
    let mut best: Option<(Vec<Cluster>, [Vec<f64>; 2], f64)> = None;
    for mask in 1u32..(1 << (n - 1)) {
        let assignment: Vec<Cluster> = (0..n)
            .map(|i| if i > 0 && (mask >> (i - 1)) & 1 == 1 { Cluster::B } else { Cluster::A })
            .collect();
        let (centroids, sse) = fit(points, &assignment);
        if best.as_ref().is_none_or(|b| sse < b.2) {
            best = Some((assignment, centroids, sse));
        }
    }
    best.expect("n >= 2 gives at least one partition")
}

/// Centroids and SSE of a fixed partition with both groups non-empty.
fn fit(points: &[&[f64]], assignment: &[Cluster]) -> ([Vec<f64>; 2], f64) {
    let dim = points[0].len();
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for (p, c) in points.iter().zip(assignment) {
        counts[c.slot()] += 1;
        for (s, v) in sums[c.slot()].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    let centroids = [0, 1].map(|k| sums[k].iter().map(|s| s / counts[k] as f64).collect::<Vec<f64>>());
    let sse = points
        .iter()
        .zip(assignment)
        .map(|(p, c)| squared_distance(p, &centroids[c.slot()]))
        .sum();
    (centroids, sse)
}

/// Single-point transfers (Hartigan's rule) from a Lloyd fixed point: a point
/// moves when `n_to/(n_to+1)·d_to² < n_from/(n_from−1)·d_from²`, which lowers
/// the SSE even when the point is already nearest its own centroid.
fn transfer_refine(
    points: &[&[f64]],
    mut assignment: Vec<Cluster>,
    mut centroids: [Vec<f64>; 2],
) -> (Vec<Cluster>, [Vec<f64>; 2], f64) {
    let mut counts = [0usize; 2];
    for c in &assignment {
        counts[c.slot()] += 1;
    }
    // Each accepted move strictly lowers the SSE, so this terminates; the cap
    // only guards against float noise.
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = assignment[i].slot();
            let to = 1 - from;
            if counts[from] < 2 {
                continue;
            }
            let (nf, nt) = (counts[from] as f64, counts[to] as f64);
            let cost_out = nf / (nf - 1.0) * squared_distance(p, &centroids[from]);
            let cost_in = nt / (nt + 1.0) * squared_distance(p, &centroids[to]);
            if cost_in < cost_out * (1.0 - 1e-12) {
                for (c, v) in centroids[from].iter_mut().zip(p.iter()) {
                    *c = (*c * nf - v) / (nf - 1.0);
                }
                for (c, v) in centroids[to].iter_mut().zip(p.iter()) {
                    *c = (*c * nt + v) / (nt + 1.0);
                }
                counts[from] -= 1;
                counts[to] += 1;
                assignment[i] = assignment[i].other();
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    // Recompute from scratch so the incremental updates leave no drift.
    let (centroids, sse) = fit(points, &assignment);
    (assignment, centroids, sse)
}

/// Moves the point farthest from the populated centroid into an empty cluster.
fn ensure_both_populated(points: &[&[f64]], assignment: &mut [Cluster], centroids: &[Vec<f64>; 2]) {
    for empty in [Cluster::A, Cluster::B] {
        if assignment.contains(&empty) {
            continue;
        }
        let full = empty.other();
        let mut far = 0;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, &centroids[full.slot()]);
            if d > far_d {
                far = i;
                far_d = d;
            }
        }
        assignment[far] = empty;
    }
}
