//! Lloyd's k-means over sparse keyword vectors, seeded with the scalable
//! over-sampling (k-means||) initialisation.
//!
//! Every reduction runs over fixed-size chunks combined in chunk order, so results
//! are bit-identical for a given seed whatever the thread count.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::keywords::TitleVector;
use crate::error::{Error, Result};

const CHUNK: usize = 4096;
/// Over-sampling rounds of the k-means|| seeding.
const INIT_STEPS: usize = 5;
const LOCAL_LLOYD_ITERS: usize = 30;
/// Weighted k-means++ restarts on the candidate set; the cheapest one seeds Lloyd.
const LOCAL_RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Independent seedings; the run with the lowest final objective is kept.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 2,
            seed: 0,
            max_iter: 100,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Category name per cluster id.
    pub labels: Vec<String>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    /// Nearest centroid by squared Euclidean distance; ties go to the lower index.
    pub fn predict(&self, v: &TitleVector) -> usize {
        let norms: Vec<f64> = self.centroids.iter().map(|c| norm2(c)).collect();
        nearest(&v.entries, &self.centroids, &norms).0
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }

    pub fn label(&self, cluster: usize) -> &str {
        &self.labels[cluster]
    }
}

fn norm2(c: &[f64]) -> f64 {
    c.iter().map(|x| x * x).sum()
}

fn sparse_dist2(x: &[(usize, f64)], c: &[f64], c_norm2: f64) -> f64 {
    let mut d = c_norm2;
    for &(i, v) in x {
        d += v * v - 2.0 * v * c[i];
    }
    d.max(0.0)
}

fn nearest(x: &[(usize, f64)], centroids: &[Vec<f64>], norms: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, (c, &cn)) in centroids.iter().zip(norms).enumerate() {
        let d = sparse_dist2(x, c, cn);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn chunked_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    partials.iter().sum()
}

fn dense(x: &[(usize, f64)], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(i, val) in x {
        v[i] = val;
    }
    v
}

fn key(x: &[(usize, f64)]) -> Vec<(usize, u64)> {
    x.iter().map(|&(i, v)| (i, v.to_bits())).collect()
}

pub fn distinct_count(points: &[TitleVector]) -> usize {
    points.iter().map(|p| key(&p.entries)).collect::<HashSet<_>>().len()
}

/// Fits k-means: `restarts` runs of k-means|| seeding followed by Lloyd
/// iterations, keeping the run with the lowest objective.
pub fn kmeans_fit(points: &[TitleVector], dim: usize, params: &KMeansParams) -> Result<ClusterModel> {
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "must be at least 1".into(),
        });
    }
    if !(params.tol >= 0.0) || params.max_iter == 0 {
        return Err(Error::InvalidParameter {
            name: "kmeans",
            reason: "tol must be non-negative and max_iter at least 1".into(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.entries.iter().any(|&(d, v)| d >= dim || !v.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: format!("posting {} has an out-of-range or non-finite entry", p.posting_id),
        });
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::TooFewDistinctVectors { k, distinct });
    }

    let mut best: Option<Run> = None;
    for run in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(run as u64);
        let centroids = init_parallel(points, dim, k, &mut rng);
        let candidate = lloyd(points, dim, centroids, params);
        if best.as_ref().is_none_or(|b| candidate.objective() < b.objective()) {
            best = Some(candidate);
        }
    }
    let best = best.expect("at least one run");
    tracing::debug!(k, iterations = best.iterations, converged = best.converged, objective = best.objective(), "k-means finished");
    Ok(ClusterModel {
        k,
        dim,
        centroids: best.centroids,
        labels: (0..k).map(|c| format!("cluster-{c}")).collect(),
        objective_history: best.history,
        iterations: best.iterations,
        converged: best.converged,
    })
}

struct Run {
    centroids: Vec<Vec<f64>>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl Run {
    fn objective(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

fn lloyd(points: &[TitleVector], dim: usize, mut centroids: Vec<Vec<f64>>, params: &KMeansParams) -> Run {
    let k = centroids.len();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let (mut labels, mut dists) = assign(points, &centroids);
    history.push(chunked_sum(&dists));
    while iterations < params.max_iter {
        iterations += 1;
        let mut next = update(points, &labels, k, dim);
        reseed_empty(points, &mut next, &dists, dim);
        let next: Vec<Vec<f64>> = next.into_iter().map(|c| c.unwrap_or_else(|| vec![0.0; dim])).collect();
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        (labels, dists) = assign(points, &centroids);
        history.push(chunked_sum(&dists));
        if shift <= params.tol {
            converged = true;
            break;
        }
    }
    Run {
        centroids,
        history,
        iterations,
        converged,
    }
}

fn assign(points: &[TitleVector], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let norms: Vec<f64> = centroids.iter().map(|c| norm2(c)).collect();
    points.par_iter().map(|p| nearest(&p.entries, centroids, &norms)).unzip()
}

/// New centroids as cluster means; `None` for empty clusters.
fn update(points: &[TitleVector], labels: &[usize], k: usize, dim: usize) -> Vec<Option<Vec<f64>>> {
    let partials: Vec<(Vec<f64>, Vec<u64>)> = points
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(ps, ls)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0u64; k];
            for (p, &l) in ps.iter().zip(ls) {
                counts[l] += 1;
                for &(d, v) in &p.entries {
                    sums[l * dim + d] += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0u64; k];
    for (s, c) in partials {
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    (0..k)
        .map(|j| {
            (counts[j] > 0).then(|| sums[j * dim..(j + 1) * dim].iter().map(|s| s / counts[j] as f64).collect())
        })
        .collect()
}

/// Moves each empty cluster onto the point currently farthest from its centroid.
fn reseed_empty(points: &[TitleVector], next: &mut [Option<Vec<f64>>], dists: &[f64], dim: usize) {
    let empties: Vec<usize> = (0..next.len()).filter(|&j| next[j].is_none()).collect();
    if empties.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let mut taken: HashSet<Vec<(usize, u64)>> = next.iter().flatten().map(|c| dense_key(c)).collect();
    let mut candidates = order.into_iter();
    for j in empties {
        let chosen = candidates.by_ref().find(|&i| taken.insert(key(&points[i].entries)));
        next[j] = Some(match chosen {
            Some(i) => dense(&points[i].entries, dim),
            None => vec![0.0; dim],
        });
    }
}

fn dense_key(c: &[f64]) -> Vec<(usize, u64)> {
    c.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, v.to_bits()))
        .collect()
}

/// k-means|| : over-sample about `2k` candidates per round in proportion to the
/// squared distance to the current candidate set, weight candidates by the points
/// they attract, then reduce them to `k` centres with weighted k-means++ and a
/// few weighted Lloyd rounds.
fn init_parallel(points: &[TitleVector], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let oversample = 2.0 * k as f64;
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let first = dense(&points[chosen[0]].entries, dim);
    let first_norm = norm2(&first);
    let mut cost: Vec<f64> = points.par_iter().map(|p| sparse_dist2(&p.entries, &first, first_norm)).collect();

    for _ in 0..INIT_STEPS {
        let phi = chunked_sum(&cost);
        if phi <= 0.0 {
            break;
        }
        let picked: Vec<usize> = (0..n)
            .filter(|&i| {
                let u: f64 = rng.random();
                u < oversample * cost[i] / phi
            })
            .collect();
        if picked.is_empty() {
            continue;
        }
        let new_centres: Vec<Vec<f64>> = picked.iter().map(|&i| dense(&points[i].entries, dim)).collect();
        let norms: Vec<f64> = new_centres.iter().map(|c| norm2(c)).collect();
        cost.par_iter_mut().zip(points.par_iter()).for_each(|(c, p)| {
            let (_, d) = nearest(&p.entries, &new_centres, &norms);
            *c = c.min(d);
        });
        chosen.extend(picked);
    }

    // one candidate per distinct vector
    let mut seen = HashSet::new();
    chosen.retain(|&i| seen.insert(key(&points[i].entries)));
    let candidates: Vec<Vec<f64>> = chosen.iter().map(|&i| dense(&points[i].entries, dim)).collect();
    let cand_norms: Vec<f64> = candidates.iter().map(|c| norm2(c)).collect();
    let nearest_cand: Vec<usize> = points
        .par_iter()
        .map(|p| nearest(&p.entries, &candidates, &cand_norms).0)
        .collect();
    let mut weights = vec![0.0; candidates.len()];
    for c in nearest_cand {
        weights[c] += 1.0;
    }

    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..LOCAL_RESTARTS {
        let mut centres = weighted_kmeans_pp(&candidates, &weights, k, rng);
        if centres.len() < k {
            fill_farthest(points, dim, k, &mut centres);
        }
        let cost = local_lloyd(&candidates, &weights, &mut centres);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, centres));
        }
    }
    best.expect("at least one restart").1
}

fn dense_dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn weighted_kmeans_pp(candidates: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let pick = |scores: &[f64], rng: &mut ChaCha8Rng| -> Option<usize> {
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        for (i, &s) in scores.iter().enumerate() {
            if s > 0.0 {
                if target < s {
                    return Some(i);
                }
                target -= s;
            }
        }
        scores.iter().rposition(|&s| s > 0.0)
    };
    let mut centres = Vec::with_capacity(k);
    let Some(first) = pick(weights, rng) else {
        return centres;
    };
    centres.push(candidates[first].clone());
    let mut d2: Vec<f64> = candidates.iter().map(|c| dense_dist2(c, &centres[0])).collect();
    while centres.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let Some(next) = pick(&scores, rng) else {
            break;
        };
        centres.push(candidates[next].clone());
        for (d, c) in d2.iter_mut().zip(candidates) {
            *d = d.min(dense_dist2(c, &candidates[next]));
        }
    }
    centres
}

fn fill_farthest(points: &[TitleVector], dim: usize, k: usize, centres: &mut Vec<Vec<f64>>) {
    while centres.len() < k {
        let norms: Vec<f64> = centres.iter().map(|c| norm2(c)).collect();
        let far = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = if centres.is_empty() { 1.0 } else { nearest(&p.entries, centres, &norms).1 };
                (i, d)
            })
            .filter(|&(_, d)| d > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match far {
            Some((i, _)) => centres.push(dense(&points[i].entries, dim)),
            None => break,
        }
    }
}

/// Weighted Lloyd rounds on the candidates; returns the final weighted cost.
fn local_lloyd(candidates: &[Vec<f64>], weights: &[f64], centres: &mut [Vec<f64>]) -> f64 {
    let k = centres.len();
    let nearest_dense = |c: &[f64], centres: &[Vec<f64>]| {
        (0..k)
            .map(|j| (j, dense_dist2(c, &centres[j])))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    };
    for _ in 0..LOCAL_LLOYD_ITERS {
        let mut sums = vec![vec![0.0; centres[0].len()]; k];
        let mut mass = vec![0.0; k];
        for (c, &w) in candidates.iter().zip(weights) {
            let j = nearest_dense(c, centres).0;
            mass[j] += w;
            sums[j].iter_mut().zip(c).for_each(|(s, x)| *s += w * x);
        }
        let mut moved = false;
        for j in 0..k {
            if mass[j] > 0.0 {
                let next: Vec<f64> = sums[j].iter().map(|s| s / mass[j]).collect();
                moved |= next != centres[j];
                centres[j] = next;
            }
        }
        if !moved {
            break;
        }
    }
    candidates.iter().zip(weights).map(|(c, w)| w * nearest_dense(c, centres).1).sum()
}
