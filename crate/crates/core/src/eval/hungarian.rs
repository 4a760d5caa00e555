//! Optimal cluster-to-label matching.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// potentials, O(n³)). Returns `col[row]`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays, index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut col = vec![0; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    col
}

/// Cluster × label count matrix over the sorted distinct ids of each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub clusters: Vec<usize>,
    pub labels: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl Contingency {
    pub fn new(cluster_ids: &[usize], labels: &[usize]) -> Result<Self> {
        if cluster_ids.is_empty() {
            return Err(Error::InvalidInput("empty clustering".into()));
        }
        if cluster_ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} cluster ids vs {} labels",
                cluster_ids.len(),
                labels.len()
            )));
        }
        let distinct = |xs: &[usize]| {
            let mut v = xs.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let clusters = distinct(cluster_ids);
        let label_set = distinct(labels);
        let mut counts = vec![vec![0; label_set.len()]; clusters.len()];
        for (c, l) in cluster_ids.iter().zip(labels) {
            let ci = clusters.binary_search(c).unwrap();
            let li = label_set.binary_search(l).unwrap();
            counts[ci][li] += 1;
        }
        Ok(Self {
            clusters,
            labels: label_set,
            counts,
        })
    }
}

/// Accuracy under the best one-to-one cluster → label mapping, and that
/// mapping. Clusters beyond the number of labels stay unassigned.
pub fn hungarian_accuracy(cluster_ids: &[usize], labels: &[usize]) -> Result<(f64, BTreeMap<usize, usize>)> {
    let table = Contingency::new(cluster_ids, labels)?;
    let (matched, assignment) = best_matching(&table.counts);
    let mapping = assignment
        .into_iter()
        .map(|(c, l)| (table.clusters[c], table.labels[l]))
        .collect();
    Ok((matched as f64 / cluster_ids.len() as f64, mapping))
}

/// Maximum total agreement over partial bijections rows → columns of a count
/// matrix. Returns the total and the matched `(row, col)` pairs.
pub fn best_matching(counts: &[Vec<usize>]) -> (usize, Vec<(usize, usize)>) {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    // padding rows/columns cost nothing
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i < rows && j < cols {
                        -(counts[i][j] as f64)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let col = min_cost_assignment(&cost);
    let mut total = 0;
    let mut pairs = Vec::new();
    for (i, &j) in col.iter().enumerate().take(rows) {
        if j < cols {
            total += counts[i][j];
            pairs.push((i, j));
        }
    }
    (total, pairs)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exhaustive search over injections of rows into padded columns.
    pub(crate) fn brute_force(counts: &[Vec<usize>]) -> usize {
        let rows = counts.len();
        let cols = counts[0].len();
        let n = rows.max(cols);
        permutations(n)
            .iter()
            .map(|perm| {
                (0..rows)
                    .filter(|&i| perm[i] < cols)
                    .map(|i| counts[i][perm[i]])
                    .sum()
            })
            .max()
            .unwrap()
    }

    #[test]
    fn worked_contingency() {
        // [[5,0],[1,4]]
        let clusters = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let (acc, map) = hungarian_accuracy(&clusters, &labels).unwrap();
        assert!((acc - 0.9).abs() < 1e-15);
        assert_eq!(map, BTreeMap::from([(0, 0), (1, 1)]));
    }

    #[test]
    fn renamed_clusters_score_one() {
        let labels = [0, 1, 2, 2, 1, 0, 3];
        let clusters = [7, 4, 9, 9, 4, 7, 1];
        let (acc, map) = hungarian_accuracy(&clusters, &labels).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(map[&7], 0);
        assert_eq!(map[&1], 3);
    }

    #[test]
    fn empty_or_mismatched_input_errors() {
        assert!(hungarian_accuracy(&[], &[]).is_err());
        assert!(hungarian_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn more_clusters_than_labels() {
        let labels = [0, 0, 1, 1, 1];
        let clusters = [0, 1, 2, 2, 3];
        let (acc, map) = hungarian_accuracy(&clusters, &labels).unwrap();
        assert!((acc - 0.6).abs() < 1e-15);
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=6);
            let counts: Vec<Vec<usize>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(0..20)).collect())
                .collect();
            assert_eq!(best_matching(&counts).0, brute_force(&counts), "{counts:?}");
        }
    }

    #[test]
    fn min_cost_on_known_matrix() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let col = min_cost_assignment(&cost);
        let total: f64 = col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }
}
