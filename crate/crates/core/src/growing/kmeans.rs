use rand::Rng;
use rayon::prelude::*;

use crate::error::{PcError, Result};

const CHUNK: usize = 256;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Lloyd iterations run, including the final one that changed nothing.
    pub iterations: usize,
}

impl KMeansResult {
    /// Sum of squared distances to assigned centroids.
    pub fn objective(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| sq_dist(p, &self.centroids[l]))
            .sum()
    }
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    let dim = points.first().map_or(0, |p| p.len());
    if points.iter().any(|p| p.len() != dim) {
        return Err(PcError::arg("points have differing dimensions"));
    }
    if k == 0 {
        return Err(PcError::arg("k-means needs at least one cluster"));
    }
    if k > points.len() {
        return Err(PcError::arg(format!(
            "{k} clusters requested for {} points",
            points.len()
        )));
    }
    if k > distinct_count(points) {
        return Err(PcError::arg(format!("{k} clusters requested but fewer distinct points")));
    }
    Ok(dim)
}

/// Grows `centroids` to `k` by repeatedly adding the point farthest from
/// every current centroid (lowest index on ties).
fn farthest_point_fill(points: &[Vec<f64>], centroids: &mut Vec<Vec<f64>>, k: usize) {
    let mut min_d: Vec<f64> = points
        .par_iter()
        .map(|p| centroids.iter().map(|c| sq_dist(c, p)).fold(f64::INFINITY, f64::min))
        .collect();
    while centroids.len() < k {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &d) in min_d.iter().enumerate() {
            if d > best.0 {
                best = (d, i);
            }
        }
        let c = points[best.1].clone();
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(sq_dist(&c, p));
        }
        centroids.push(c);
    }
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .par_chunks(CHUNK)
        .flat_map_iter(|ps| ps.iter().map(|p| nearest(centroids, p)).collect::<Vec<_>>())
        .collect()
}

fn means(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points.first().map_or(0, |p| p.len());
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|x| x / n as f64).collect();
        }
    }
}

/// Moves the point farthest from its centroid in the largest cluster into
/// each empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    loop {
        let mut counts = vec![0usize; centroids.len()];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let largest = (0..counts.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        if counts[largest] <= 1 {
            return;
        }
        let mut far = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            if labels[i] == largest {
                let d = sq_dist(p, &centroids[largest]);
                if d > far.0 {
                    far = (d, i);
                }
            }
        }
        labels[far.1] = empty;
        centroids[empty] = points[far.1].clone();
    }
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeansResult {
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let mut next = assign(points, &centroids);
        repair_empty(points, &mut next, &mut centroids);
        let changed = next != labels;
        labels = next;
        means(points, &labels, &mut centroids);
        if !changed {
            break;
        }
    }
    KMeansResult {
        labels,
        centroids,
        iterations,
    }
}

/// Lloyd's algorithm where the first `seeds.len()` centroids start at the
/// given seeds and the rest are filled in by farthest-point sampling.
pub fn seeded_kmeans(
    points: &[Vec<f64>],
    k_new: usize,
    seeds: &[Vec<f64>],
    max_iters: usize,
) -> Result<KMeansResult> {
    let dim = check_points(points, k_new)?;
    if seeds.len() > k_new {
        return Err(PcError::arg(format!(
            "{} seeds for {k_new} clusters",
            seeds.len()
        )));
    }
    if seeds.iter().any(|s| s.len() != dim) {
        return Err(PcError::arg("seed dimension differs from the points"));
    }
    let mut centroids = seeds.to_vec();
    if centroids.is_empty() {
        centroids.push(points[0].clone());
    }
    farthest_point_fill(points, &mut centroids, k_new);
    Ok(lloyd(points, centroids, max_iters))
}

/// Grows `centroids` to `k` by D^2 sampling (k-means++).
fn d2_fill<R: Rng + ?Sized>(points: &[Vec<f64>], centroids: &mut Vec<Vec<f64>>, k: usize, rng: &mut R) {
    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| centroids.iter().map(|c| sq_dist(c, p)).fold(f64::INFINITY, f64::min))
        .collect();
    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let mut pick = min_d.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for (i, &d) in min_d.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
        }
        let c = points[pick].clone();
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(sq_dist(&c, p));
        }
        centroids.push(c);
    }
}

/// [`seeded_kmeans`] followed by `restarts` further runs whose extra
/// centroids are drawn by D^2 sampling; the lowest objective wins, with
/// the farthest-point run kept on ties. Farthest-point initialization alone
/// latches onto outliers.
pub fn seeded_kmeans_restarts<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k_new: usize,
    seeds: &[Vec<f64>],
    max_iters: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    let mut best = seeded_kmeans(points, k_new, seeds, max_iters)?;
    if seeds.is_empty() {
        return Ok(best);
    }
    let mut best_obj = best.objective(points);
    for _ in 0..restarts {
        let mut centroids = seeds.to_vec();
        d2_fill(points, &mut centroids, k_new, rng);
        let r = lloyd(points, centroids, max_iters);
        let obj = r.objective(points);
        if obj < best_obj {
            best = r;
            best_obj = obj;
        }
    }
    Ok(best)
}

/// Unseeded k-means with k-means++ initialization.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    check_points(points, k)?;
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    d2_fill(points, &mut centroids, k, rng);
    Ok(lloyd(points, centroids, max_iters))
}
