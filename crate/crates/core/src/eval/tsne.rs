//! Exact t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and low momentum.
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

/// Embeds `rows` in 2-D with default settings and the given perplexity.
pub fn tsne_embed(rows: &[Vec<f64>], perplexity: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
    tsne_embed_with(
        rows,
        &TsneConfig {
            perplexity,
            ..TsneConfig::default()
        },
        seed,
    )
}

pub fn tsne_embed_with(rows: &[Vec<f64>], cfg: &TsneConfig, seed: u64) -> Result<Vec<[f64; 2]>> {
    let n = rows.len();
    if !(cfg.perplexity > 0.0) {
        return Err(Error::Config("perplexity must be positive".into()));
    }
    if (n as f64) <= 3.0 * cfg.perplexity {
        return Err(Error::InsufficientData(format!(
            "t-SNE with perplexity {} needs more than {} samples, got {n}",
            cfg.perplexity,
            3.0 * cfg.perplexity
        )));
    }
    let p = joint_probabilities(rows, cfg.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).unwrap();
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iterations;
        let exag = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };

        let mut sum_num = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                sum_num += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let coeff = (exag * p[i * n + j] - (q / sum_num).max(1e-12)) * q;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        let (mx, my) = y.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        for p in &mut y {
            p[0] -= mx / n as f64;
            p[1] -= my / n as f64;
        }
    }
    if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("t-SNE embedding diverged".into()));
    }
    Ok(y)
}

/// Symmetrized affinities `P` (row-major N×N) with each conditional row
/// calibrated to the target perplexity by bisection on the precision.
fn joint_probabilities(rows: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        // distances shifted by the row minimum keep exp() in range
        let dmin = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let out = &mut cond[i * n..(i + 1) * n];
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut wsum = 0.0;
            for j in 0..n {
                out[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += out[j];
                wsum += out[j] * (row[j] - dmin);
            }
            let entropy = sum.ln() + beta * wsum / sum;
            out.iter_mut().for_each(|v| *v /= sum);
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    p
}

/// Mean silhouette coefficient of a labelled point set.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sums[labels[j]] += d;
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
