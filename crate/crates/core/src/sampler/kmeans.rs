//! Lloyd's k-means with k-means++ seeding, deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SamplerError;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every assignment step, first to last.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` a hair below `target`; take the last positive weight
            pick.or_else(|| d2.iter().rposition(|&d| d > 0.0)).unwrap()
        } else {
            // every remaining point coincides with a centroid
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups.
///
/// Stops after `max_iter` Lloyd iterations, when assignments stop changing,
/// or when no centroid moves by `tol` or more. Empty clusters keep their
/// previous centroid, so inertia never increases between iterations.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansFit, SamplerError> {
    let n = points.len();
    if k == 0 {
        return Err(SamplerError::InvalidK);
    }
    if k > n {
        return Err(SamplerError::KTooLarge { k, n });
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut inertia = 0.0;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            inertia += d;
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(squared_distance(&mean, &centroids[j]).sqrt());
            centroids[j] = mean;
        }
        if shift < tol {
            // one more assignment pass so labels match the final centroids
            let mut inertia = 0.0;
            for (a, p) in assignments.iter_mut().zip(points) {
                let (j, d) = nearest(p, &centroids);
                inertia += d;
                *a = j;
            }
            history.push(inertia);
            break;
        }
    }

    Ok(KMeansFit { assignments, centroids, inertia_history: history, iterations })
}
