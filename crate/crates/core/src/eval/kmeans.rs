//! Lloyd's k-means with seeded restarts.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Clusters `points` into `k` groups; best inertia over `restarts` runs.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, k, restarts, 300, seed)
}

pub fn kmeans_with(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} points for {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points of differing dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init: Vec<Vec<f64>> = sample(&mut rng, points.len(), k)
            .into_iter()
            .map(|i| points[i].clone())
            .collect();
        let run = lloyd(points, init, max_iter);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansResult {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut inertia = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            changed |= *a != j;
            *a = j;
            inertia += d;
        }
        trace.push(inertia);
        iterations += 1;
        if !changed || iterations >= max_iter {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        // an empty cluster keeps its previous centroid
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }
    KMeansResult {
        assignments,
        centroids,
        inertia: *trace.last().unwrap(),
        inertia_trace: trace,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::eval::hungarian_accuracy;

    pub(crate) fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)]);
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn single_cluster() {
        let (pts, _) = blobs(&[[0.0, 0.0], [5.0, 5.0]], 10, 1.0, 1);
        let r = kmeans(&pts, 1, 3, 0).unwrap();
        assert!(r.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn recovers_separated_blobs() {
        let (pts, labels) = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 30, 0.5, 2);
        let r = kmeans(&pts, 3, 10, 4).unwrap();
        assert_eq!(hungarian_accuracy(&r.assignments, &labels).unwrap().0, 1.0);
    }

    #[test]
    fn k_equals_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let r = kmeans(&pts, 12, 2, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort_unstable();
        a.dedup();
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn too_few_points_errors() {
        assert!(kmeans(&[vec![0.0], vec![1.0]], 3, 1, 0).is_err());
        assert!(kmeans(&[vec![0.0]], 0, 1, 0).is_err());
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..30 {
            let pts: Vec<Vec<f64>> = (0..60)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let r = kmeans_with(&pts, 5, 1, 300, trial).unwrap();
            for w in r.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", r.inertia_trace);
            }
        }
    }

    #[test]
    fn seeded_runs_agree() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 0.0]], 20, 1.5, 5);
        assert_eq!(kmeans(&pts, 4, 5, 8).unwrap(), kmeans(&pts, 4, 5, 8).unwrap());
    }
}
