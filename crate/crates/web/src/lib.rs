//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns JSON so the page can stay plain JavaScript. The
//! typed functions behind them are ordinary Rust and carry the native tests.

use pairfeat::audio::{mel_spectrogram, FrontendConfig};
use pairfeat::eval::{hungarian_accuracy, kmeans};
use pairfeat::model::{feature_distribution, FeatureVector};
use pairfeat::pairloss::{batch_pair_loss_with_grad, PairGate, PairLossConfig};
use pairfeat::synth::{clip_seed, generate_clip, SynthSpec, ARCHETYPES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub class: String,
    pub time_steps: usize,
    pub mel_bins: usize,
    /// Row-major `(time, mel)` log-mel values.
    pub values: Vec<f64>,
}

/// One 2.56 s log-mel frame of a synthetic clip of archetype `class`.
pub fn synth_heatmap(class: usize, seed: u64, snr_db: f64) -> Result<Heatmap, String> {
    if class >= ARCHETYPES.len() {
        return Err(format!("class must be below {}", ARCHETYPES.len()));
    }
    let frontend = FrontendConfig::default();
    let spec = SynthSpec {
        num_classes: ARCHETYPES.len(),
        clip_seconds: frontend.frame_seconds,
        noise_snr_db: snr_db,
        ..SynthSpec::default()
    };
    let mut samples = generate_clip(&spec, class, clip_seed(seed, class, 0));
    samples.resize(frontend.frame_samples(), 0.0);
    let frame = mel_spectrogram(&samples, &frontend).map_err(|e| e.to_string())?;
    Ok(Heatmap {
        class: ARCHETYPES[class].to_string(),
        time_steps: frame.time_steps,
        mel_bins: frame.mel_bins,
        values: frame.values,
    })
}

#[derive(Debug, Serialize)]
pub struct PairGrid {
    pub distributions: Vec<Vec<f64>>,
    pub kl: Vec<Vec<f64>>,
    pub ratio: Vec<Vec<f64>>,
    /// `true` where the pair is treated as similar.
    pub similar: Vec<Vec<bool>>,
    pub pair_losses: Vec<Vec<f64>>,
    pub loss: f64,
}

/// KL grid, similarity ratios, gates and per-pair losses of a batch of
/// pre-softmax vectors.
pub fn pair_grid(logits: &[Vec<f64>], threshold: f64, margin: f64) -> Result<PairGrid, String> {
    let cfg = PairLossConfig {
        threshold,
        margin,
        ..PairLossConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let out = batch_pair_loss_with_grad(logits, &cfg).map_err(|e| e.to_string())?;
    let distributions = logits
        .iter()
        .map(|l| {
            feature_distribution(&FeatureVector { values: l.clone() })
                .map(|d| d.probs().to_vec())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let similar: Vec<Vec<bool>> = out
        .gates
        .iter()
        .map(|r| r.iter().map(|g| *g == PairGate::Similar).collect())
        .collect();
    let pair_losses = out
        .kl
        .iter()
        .zip(&similar)
        .map(|(kr, sr)| {
            kr.iter()
                .zip(sr)
                .map(|(&k, &s)| if s { k } else { (margin - k).max(0.0) })
                .collect()
        })
        .collect();
    Ok(PairGrid {
        distributions,
        kl: out.kl,
        ratio: out.ratio,
        similar,
        pair_losses,
        loss: out.loss,
    })
}

#[derive(Debug, Serialize)]
pub struct ClusterDemo {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub clusters: Vec<usize>,
    pub accuracy: f64,
    /// `(cluster, label)` pairs of the best matching.
    pub assignment: Vec<(usize, usize)>,
}

/// `classes` Gaussian blobs on a circle, clustered with k-means and scored
/// with the Hungarian matching.
pub fn cluster_blobs(classes: usize, per_class: usize, spread: f64, k: usize, seed: u64) -> Result<ClusterDemo, String> {
    if classes == 0 || per_class == 0 || !(spread >= 0.0) {
        return Err("classes and per_class must be positive, spread non-negative".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread.max(1e-9)).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        let angle = std::f64::consts::TAU * c as f64 / classes as f64;
        for _ in 0..per_class {
            points.push([
                angle.cos() + noise.sample(&mut rng),
                angle.sin() + noise.sample(&mut rng),
            ]);
            labels.push(c);
        }
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let km = kmeans(&rows, k, 10, seed).map_err(|e| e.to_string())?;
    let (accuracy, mapping) = hungarian_accuracy(&km.assignments, &labels).map_err(|e| e.to_string())?;
    Ok(ClusterDemo {
        points,
        labels,
        clusters: km.assignments,
        accuracy,
        assignment: mapping.into_iter().collect(),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn class_names() -> String {
    serde_json::to_string(&ARCHETYPES).unwrap_or_default()
}

#[wasm_bindgen]
pub fn heatmap_json(class: usize, seed: u64, snr_db: f64) -> Result<String, JsError> {
    to_json(synth_heatmap(class, seed, snr_db))
}

/// `logits` is row-major `n x k`.
#[wasm_bindgen]
pub fn pair_grid_json(logits: &[f64], n: usize, threshold: f64, margin: f64) -> Result<String, JsError> {
    if n == 0 || logits.len() % n != 0 {
        return Err(JsError::new("logits length must be a multiple of n"));
    }
    let rows: Vec<Vec<f64>> = logits.chunks(logits.len() / n).map(<[f64]>::to_vec).collect();
    to_json(pair_grid(&rows, threshold, margin))
}

#[wasm_bindgen]
pub fn cluster_json(classes: usize, per_class: usize, spread: f64, k: usize, seed: u64) -> Result<String, JsError> {
    to_json(cluster_blobs(classes, per_class, spread, k, seed))
}
