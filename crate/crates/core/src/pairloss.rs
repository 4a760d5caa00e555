//! Batch-pairwise KL similarity loss.
//!
//! For a batch of feature distributions `B_0..B_{N-1}` every ordered pair
//! `(n, m)` gets a similarity ratio `f[n][m] = KL(B_n || B_m) / mean(KL)`.
//! Pairs with `f < threshold` are pulled together (loss = KL); all others
//! are pushed apart up to a margin (loss = `max(0, margin - KL)`). The batch
//! loss is the sum over all `N^2` ordered pairs.

use serde::{Deserialize, Serialize};

use crate::model::{softmax, FeatureDistribution};
use crate::{Error, Result};

/// Below this batch-mean KL the batch counts as degenerate and every ratio
/// is defined as 1.
pub const DEGENERATE_MEAN: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PairLossConfig {
    pub threshold: f64,
    pub margin: f64,
    /// Floor applied to both distributions before the logarithm.
    pub kl_epsilon: f64,
    /// Weight of the pairwise term when added to the reconstruction MSE.
    pub weight: f64,
    /// Average the ratio denominator over all `N^2` entries (true) or over
    /// the `N(N-1)` off-diagonal entries only.
    pub include_diagonal_in_mean: bool,
}

impl Default for PairLossConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            margin: 2.0,
            kl_epsilon: 1e-8,
            weight: 1.0,
            include_diagonal_in_mean: true,
        }
    }
}

impl PairLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config("pair loss threshold must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("pair loss margin must be positive".into()));
        }
        if !(self.kl_epsilon > 0.0 && self.kl_epsilon < 1e-3) {
            return Err(Error::Config("kl_epsilon must lie in (0, 1e-3)".into()));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Config("pair loss weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Which branch of the pairwise loss a pair falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairGate {
    /// `f < threshold`: loss is the divergence itself.
    Similar,
    /// Otherwise: hinge `max(0, margin - KL)`.
    Dissimilar,
}

/// Floors entries at `eps` and renormalizes.
fn clamp_normalize(p: &[f64], eps: f64) -> Vec<f64> {
    let c: Vec<f64> = p.iter().map(|&v| v.max(eps)).collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

fn kl_clamped(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum::<f64>()
        .max(0.0)
}

/// `KL(p || q)` in nats after flooring both inputs at `eps`.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL between lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::InvalidInput("empty distributions".into()));
    }
    Ok(kl_clamped(&clamp_normalize(p, eps), &clamp_normalize(q, eps)))
}

/// `N x N` grid of `KL(B_n || B_m)`; the diagonal is exactly zero.
pub fn pairwise_kl_matrix(batch: &[FeatureDistribution], eps: f64) -> Result<Vec<Vec<f64>>> {
    let probs: Vec<&[f64]> = batch.iter().map(|d| d.probs()).collect();
    kl_matrix(&probs, eps)
}

fn kl_matrix(batch: &[&[f64]], eps: f64) -> Result<Vec<Vec<f64>>> {
    if batch.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pairwise loss needs at least 2 distributions, got {}",
            batch.len()
        )));
    }
    let k = batch[0].len();
    if batch.iter().any(|b| b.len() != k) {
        return Err(Error::Shape("distributions differ in length".into()));
    }
    let clamped: Vec<Vec<f64>> = batch.iter().map(|b| clamp_normalize(b, eps)).collect();
    Ok((0..batch.len())
        .map(|n| {
            (0..batch.len())
                .map(|m| {
                    if n == m {
                        0.0
                    } else {
                        kl_clamped(&clamped[n], &clamped[m])
                    }
                })
                .collect()
        })
        .collect())
}

/// Normalizes a KL grid by its mean. A mean below [`DEGENERATE_MEAN`]
/// yields an all-ones grid.
pub fn similarity_ratio(kl: &[Vec<f64>], include_diagonal: bool) -> Vec<Vec<f64>> {
    let n = kl.len();
    let (sum, count) = if include_diagonal {
        (kl.iter().flatten().sum::<f64>(), n * n)
    } else {
        let s = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| kl[i][j])
            .sum::<f64>();
        (s, n * n.saturating_sub(1))
    };
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    if mean < DEGENERATE_MEAN {
        return vec![vec![1.0; n]; n];
    }
    kl.iter()
        .map(|row| row.iter().map(|v| v / mean).collect())
        .collect()
}

pub fn gate(f: f64, config: &PairLossConfig) -> PairGate {
    if f < config.threshold {
        PairGate::Similar
    } else {
        PairGate::Dissimilar
    }
}

/// Loss of one ordered pair.
pub fn pair_loss(kl: f64, f: f64, config: &PairLossConfig) -> f64 {
    gated_loss(kl, gate(f, config), config.margin)
}

fn gated_loss(kl: f64, gate: PairGate, margin: f64) -> f64 {
    match gate {
        PairGate::Similar => kl,
        PairGate::Dissimilar => (margin - kl).max(0.0),
    }
}

/// Sum of [`pair_loss`] over all `N^2` ordered pairs, diagonal included.
pub fn batch_pair_loss(batch: &[FeatureDistribution], config: &PairLossConfig) -> Result<f64> {
    let kl = pairwise_kl_matrix(batch, config.kl_epsilon)?;
    let f = similarity_ratio(&kl, config.include_diagonal_in_mean);
    Ok(kl
        .iter()
        .zip(&f)
        .flat_map(|(kr, fr)| kr.iter().zip(fr))
        .map(|(&k, &fv)| pair_loss(k, fv, config))
        .sum())
}

/// Loss value, branch decisions and gradient w.r.t. the pre-softmax vectors.
#[derive(Debug, Clone)]
pub struct PairLossOutput {
    pub loss: f64,
    pub kl: Vec<Vec<f64>>,
    pub ratio: Vec<Vec<f64>>,
    pub gates: Vec<Vec<PairGate>>,
    /// `d loss / d logits[n][k]`.
    pub grad: Vec<Vec<f64>>,
}

/// Evaluates the batch loss on softmax(logits) and differentiates it.
///
/// Branch decisions are made from the current values and held constant;
/// gradient flows through the KL terms only.
pub fn batch_pair_loss_with_grad(logits: &[Vec<f64>], config: &PairLossConfig) -> Result<PairLossOutput> {
    let probs: Vec<Vec<f64>> = logits.iter().map(|v| softmax(v)).collect();
    let refs: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
    let kl = kl_matrix(&refs, config.kl_epsilon)?;
    let ratio = similarity_ratio(&kl, config.include_diagonal_in_mean);
    let gates: Vec<Vec<PairGate>> = ratio
        .iter()
        .map(|row| row.iter().map(|&f| gate(f, config)).collect())
        .collect();
    let (loss, grad) = gated_loss_and_grad(logits, &gates, config)?;
    Ok(PairLossOutput {
        loss,
        kl,
        ratio,
        gates,
        grad,
    })
}

/// Batch loss with externally fixed branch decisions, and its gradient.
pub fn gated_loss_and_grad(
    logits: &[Vec<f64>],
    gates: &[Vec<PairGate>],
    config: &PairLossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = logits.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "pairwise loss needs at least 2 distributions, got {n}"
        )));
    }
    let k = logits[0].len();
    if logits.iter().any(|l| l.len() != k) || gates.len() != n || gates.iter().any(|g| g.len() != n) {
        return Err(Error::Shape("logits and gates disagree on batch shape".into()));
    }
    if logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pairwise loss logits".into()));
    }
    let eps = config.kl_epsilon;
    let probs: Vec<Vec<f64>> = logits.iter().map(|v| softmax(v)).collect();
    let clamped: Vec<Vec<f64>> = probs.iter().map(|p| clamp_normalize(p, eps)).collect();
    let log_c: Vec<Vec<f64>> = clamped.iter().map(|c| c.iter().map(|v| v.ln()).collect()).collect();

    // gradient w.r.t. the clamped, renormalized distributions
    let mut g_clamped = vec![vec![0.0; k]; n];
    let mut loss = 0.0;
    for a in 0..n {
        for b in 0..n {
            let kl = if a == b {
                0.0
            } else {
                kl_clamped(&clamped[a], &clamped[b])
            };
            loss += gated_loss(kl, gates[a][b], config.margin);
            let dkl = match gates[a][b] {
                PairGate::Similar => 1.0,
                PairGate::Dissimilar if config.margin - kl > 0.0 => -1.0,
                PairGate::Dissimilar => 0.0,
            };
            if dkl == 0.0 || a == b {
                // KL(p || p) is identically zero, so the diagonal has no gradient
                continue;
            }
            for j in 0..k {
                g_clamped[a][j] += dkl * (log_c[a][j] - log_c[b][j] + 1.0);
                g_clamped[b][j] -= dkl * clamped[a][j] / clamped[b][j];
            }
        }
    }

    let grad = (0..n)
        .map(|i| {
            let p = &probs[i];
            let raw_sum: f64 = p.iter().map(|v| v.max(eps)).sum();
            let inner: f64 = g_clamped[i].iter().zip(&clamped[i]).map(|(g, c)| g * c).sum();
            // through the floor + renormalization
            let dp: Vec<f64> = (0..k)
                .map(|j| {
                    if p[j] > eps {
                        (g_clamped[i][j] - inner) / raw_sum
                    } else {
                        0.0
                    }
                })
                .collect();
            // through the softmax
            let dot: f64 = dp.iter().zip(p).map(|(d, q)| d * q).sum();
            (0..k).map(|j| p[j] * (dp[j] - dot)).collect()
        })
        .collect();
    Ok((loss, grad))
}
