//! Lloyd's k-means with k-means++ seeding. Used as the coarse quantizer of
//! the ANN index and by the clustering evaluation.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::util::{rng, squared_distance};

#[derive(Debug, Clone)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stop early once assignments no longer change.
    pub stop_on_convergence: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 100,
            restarts: 10,
            seed: 0,
            stop_on_convergence: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, r: &mut crate::util::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[r.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            r.random_range(0..n)
        } else {
            let mut target = r.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, c));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, opts: &KMeansOptions) -> KMeansResult {
    let dim = points[0].len();
    let k = centroids.len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..opts.max_iter {
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assignments;
        assignments = next;
        if !changed && opts.stop_on_convergence {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let assignments: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum();
    KMeansResult {
        centroids,
        assignments,
        inertia,
    }
}

/// Best of `opts.restarts` k-means++ seeded runs by inertia.
pub fn fit(points: &[Vec<f64>], k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("k-means points differ in dimension"));
    }
    let mut best: Option<KMeansResult> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut r = rng(opts.seed, restart as u64);
        let init = plus_plus_init(points, k, &mut r);
        let result = lloyd(points, init, opts);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}
