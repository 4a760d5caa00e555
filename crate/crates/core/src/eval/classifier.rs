//! Single affine layer + softmax, trained by full-batch cross-entropy on
//! standardized inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::softmax;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.05,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// Row-major `[classes, inputs]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearClassifier {
    /// Untrained classifier with random weights and identity standardization.
    pub fn random(inputs: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weights: (0..inputs * classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            inputs,
            classes,
            mean: vec![0.0; inputs],
            scale: vec![1.0; inputs],
        }
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                self.bias[c]
                    + self.weights[c * self.inputs..(c + 1) * self.inputs]
                        .iter()
                        .zip(z)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(&self.standardize(x)))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(&self.standardize(x));
        (0..l.len()).fold(0, |b, i| if l[i] > l[b] { i } else { b })
    }
}

/// Fits a classifier on `rows` with integer `labels` in `0..classes`.
pub fn train_linear_classifier(
    rows: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<LinearClassifier> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", rows.len(), labels.len())));
    }
    let mut seen = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::InsufficientData("classifier needs at least two classes".into()));
    }
    if seen.last().is_some_and(|&l| l >= classes) {
        return Err(Error::InvalidInput("label outside the class range".into()));
    }
    let k = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var.sqrt() < 1e-12 {
                1.0
            } else {
                1.0 / var.sqrt()
            }
        })
        .collect();
    let mut clf = LinearClassifier {
        weights: vec![0.0; classes * k],
        bias: vec![0.0; classes],
        inputs: k,
        classes,
        mean,
        scale,
    };
    let z: Vec<Vec<f64>> = rows.iter().map(|r| clf.standardize(r)).collect();

    // Adam on the full batch
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let np = classes * k + classes;
    let mut m = vec![0.0; np];
    let mut v = vec![0.0; np];
    for t in 1..=cfg.epochs {
        let mut g = vec![0.0; np];
        for (x, &y) in z.iter().zip(labels) {
            let mut p = softmax(&clf.logits(x));
            p[y] -= 1.0;
            for c in 0..classes {
                let d = p[c] / n;
                for j in 0..k {
                    g[c * k + j] += d * x[j];
                }
                g[classes * k + c] += d;
            }
        }
        for (gi, w) in g.iter_mut().zip(&clf.weights) {
            *gi += cfg.l2 * w;
        }
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for i in 0..np {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let step = cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            if i < classes * k {
                clf.weights[i] -= step;
            } else {
                clf.bias[i - classes * k] -= step;
            }
        }
    }
    Ok(clf)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn classifier_accuracy(clf: &LinearClassifier, rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty test table".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", rows.len(), labels.len())));
    }
    let correct = rows.iter().zip(labels).filter(|(r, &l)| clf.predict(r) == l).count();
    Ok(correct as f64 / rows.len() as f64)
}

/// `counts[true][predicted]`.
pub fn confusion_matrix(clf: &LinearClassifier, rows: &[Vec<f64>], labels: &[usize]) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; clf.classes]; clf.classes];
    for (r, &l) in rows.iter().zip(labels) {
        m[l][clf.predict(r)] += 1;
    }
    m
}
