use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::audio::{FrameSequence, MelFrame};
use crate::pairloss::{batch_pair_loss_with_grad, gated_loss_and_grad, PairLossConfig};

fn random_frames(cfg: &ModelConfig, rng: &mut ChaCha8Rng, base: usize) -> [Arc<MelFrame>; 4] {
    std::array::from_fn(|i| {
        let v = (0..cfg.frame_time * cfg.frame_mel)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        Arc::new(MelFrame::new(v, cfg.frame_time, cfg.frame_mel, 0.0, base + i).unwrap())
    })
}

fn random_sequence(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> FrameSequence {
    let [a, b, c, d] = random_frames(cfg, rng, 0);
    FrameSequence::new([a, b, c], d, None, "r").unwrap()
}

#[test]
fn pool_code_examples() {
    let code = CodeTensor::from_fn(2, 2, 1, |t, f, _| [[1.0, 2.0], [3.0, 4.0]][t][f]);
    assert_eq!(pool_code(&code).values, vec![2.5]);
    let zero = CodeTensor::from_fn(3, 2, 4, |_, _, _| 0.0);
    assert_eq!(pool_code(&zero).values, vec![0.0; 4]);
    let constant = CodeTensor::from_fn(3, 5, 2, |_, _, k| if k == 1 { 1.75 } else { -2.0 });
    assert_eq!(pool_code(&constant).values, vec![-2.0, 1.75]);
}

#[test]
fn pool_code_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (t, f, k) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..5));
        let vals: Vec<f64> = (0..t * f * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let code = CodeTensor::from_channel_major(vals, k, t, f);
        let pooled = pool_code(&code);
        assert_eq!(code.shape(), (t, f, k));
        for ch in 0..k {
            let mut sum = 0.0;
            for i in 0..t {
                for j in 0..f {
                    sum += code.get(i, j, ch);
                }
            }
            assert!((pooled.values[ch] - sum / (t * f) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_examples() {
    let uniform = feature_distribution(&FeatureVector { values: vec![0.0; 4] }).unwrap();
    assert!(uniform.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    let d = feature_distribution(&FeatureVector {
        values: vec![1f64.ln(), 3f64.ln()],
    })
    .unwrap();
    assert!((d.probs()[0] - 0.25).abs() < 1e-12);
    assert!((d.probs()[1] - 0.75).abs() < 1e-12);
    let v = vec![0.3, -1.2, 4.0];
    let shifted: Vec<f64> = v.iter().map(|x| x + 17.5).collect();
    let a = feature_distribution(&FeatureVector { values: v }).unwrap();
    let b = feature_distribution(&FeatureVector { values: shifted }).unwrap();
    for (x, y) in a.probs().iter().zip(b.probs()) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(feature_distribution(&FeatureVector { values: vec![f64::NAN, 1.0] }).is_err());
}

#[test]
fn softmax_fuzz_is_valid_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let k = 2 + i % 127;
        let scale = if i % 3 == 0 { 100.0 } else { 5.0 };
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-scale..scale)).collect();
        let d = feature_distribution(&FeatureVector { values: v }).unwrap();
        assert!(d.probs().iter().all(|&p| p > 0.0));
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn config_validation() {
    ModelConfig::default().validate().unwrap();
    ModelConfig::toy().validate().unwrap();
    assert_eq!(ModelConfig::default().code_dims(), (10, 8));
    let bad = ModelConfig {
        frame_time: 81,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        code_channels: 1,
        ..ModelConfig::toy()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        kernel: 2,
        ..ModelConfig::toy()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn default_shapes() {
    let cfg = ModelConfig::default();
    let model = AfpModel::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = random_sequence(&cfg, &mut rng);
    let inputs: Vec<&MelFrame> = seq.inputs.iter().map(|f| f.as_ref()).collect();
    assert_eq!(model.encode(&inputs).unwrap().shape(), (10, 8, 128));
    let (pred, dist) = model.forward(&seq).unwrap();
    assert_eq!(pred.shape(), (80, 64));
    assert_eq!(dist.len(), 128);
    assert!(pred.values.iter().all(|v| v.is_finite()));
}

#[test]
fn channel_count_passes_through() {
    let cfg = ModelConfig {
        code_channels: 16,
        hidden_channels: vec![4, 8],
        ..ModelConfig::default()
    };
    let model = AfpModel::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = random_sequence(&cfg, &mut rng);
    let inputs: Vec<&MelFrame> = seq.inputs.iter().map(|f| f.as_ref()).collect();
    assert_eq!(model.encode(&inputs).unwrap().shape(), (10, 8, 16));
}

#[test]
fn wrong_input_count_or_shape_errors() {
    let cfg = ModelConfig::toy();
    let model = AfpModel::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = random_frames(&cfg, &mut rng, 0);
    let two: Vec<&MelFrame> = frames[..2].iter().map(|f| f.as_ref()).collect();
    assert!(matches!(model.encode(&two), Err(Error::Shape(_))));
    let odd = MelFrame::new(vec![0.0; 16], 4, 4, 0.0, 0).unwrap();
    let mixed = [frames[0].as_ref(), frames[1].as_ref(), &odd];
    assert!(matches!(model.predict_next_frame(&mixed), Err(Error::Shape(_))));
}

#[test]
fn inference_is_deterministic_and_finite_on_silence() {
    let cfg = ModelConfig::toy();
    let model = AfpModel::new(cfg.clone(), 9).unwrap();
    let silence = MelFrame::new(vec![0.0; 64], 8, 8, 0.0, 0).unwrap();
    let inputs = [&silence, &silence, &silence];
    let a = model.predict_next_frame(&inputs).unwrap();
    let b = model.predict_next_frame(&inputs).unwrap();
    assert_eq!(a, b);
    assert!(a.values.iter().all(|v| v.is_finite()));
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let cfg = ModelConfig::toy();
    let mut model = AfpModel::new(cfg.clone(), 21).unwrap();
    // push running statistics away from their initial values
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seqs: Vec<FrameSequence> = (0..4).map(|_| random_sequence(&cfg, &mut rng)).collect();
    let refs: Vec<&FrameSequence> = seqs.iter().collect();
    model.forward_train(&refs).unwrap();
    model.save_weights(&path).unwrap();

    let mut fresh = AfpModel::new(cfg.clone(), 99).unwrap();
    fresh.load_weights(&path).unwrap();
    for s in &seqs {
        let (p1, d1) = model.forward(s).unwrap();
        let (p2, d2) = fresh.forward(s).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(d1, d2);
    }
}

#[test]
fn load_rejects_mismatch_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let small = ModelConfig {
        code_channels: 4,
        ..ModelConfig::toy()
    };
    AfpModel::new(small, 1).unwrap().save_weights(&path).unwrap();
    let mut model = AfpModel::new(ModelConfig::toy(), 1).unwrap();
    assert!(matches!(model.load_weights(&path), Err(Error::Checkpoint(_))));

    model.save_weights(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(model.load_weights(&path), Err(Error::Checkpoint(_))));
}

fn raw_batch(cfg: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let cells = cfg.frame_time * cfg.frame_mel;
    let inputs = (0..n)
        .map(|_| {
            (0..INPUT_FRAMES)
                .map(|_| (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let targets = (0..n)
        .map(|_| (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (inputs, targets)
}

/// Batch-mean squared error and its gradient.
fn mse_and_grad(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = preds.len() as f64;
    let cells = preds[0].len() as f64;
    let mut loss = 0.0;
    let grads = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(a, b)| {
                    loss += (a - b).powi(2) / (n * cells);
                    2.0 * (a - b) / (n * cells)
                })
                .collect()
        })
        .collect();
    (loss, grads)
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = ModelConfig::toy();
    let mut model = AfpModel::new(cfg.clone(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (inputs, targets) = raw_batch(&cfg, 4, &mut rng);
    let pcfg = PairLossConfig::default();

    let (out, trace) = model.forward_train_raw(&inputs).unwrap();
    let logits: Vec<Vec<f64>> = out.pooled.iter().map(|v| v.values.clone()).collect();
    let pair = batch_pair_loss_with_grad(&logits, &pcfg).unwrap();
    let gates = pair.gates.clone();
    let (_, d_pred) = mse_and_grad(&out.predictions, &targets);
    model.zero_grad();
    model.backward(&trace, &d_pred, Some(&pair.grad));
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();

    let loss_at = |m: &AfpModel| -> f64 {
        let (o, _) = m.forward_train_raw(&inputs).unwrap();
        let l: Vec<Vec<f64>> = o.pooled.iter().map(|v| v.values.clone()).collect();
        let (pl, _) = gated_loss_and_grad(&l, &gates, &pcfg).unwrap();
        mse_and_grad(&o.predictions, &targets).0 + pl
    };

    let h = 1e-5;
    let n_params = analytic.len();
    for pi in 0..n_params {
        let len = analytic[pi].len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[pi].value[i];
            model.params_mut()[pi].value[i] = orig + h;
            let up = loss_at(&model);
            model.params_mut()[pi].value[i] = orig - h;
            let down = loss_at(&model);
            model.params_mut()[pi].value[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = numeric.iter().zip(&analytic[pi]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = numeric.iter().map(|a| a * a).sum::<f64>().sqrt()
            .max(analytic[pi].iter().map(|a| a * a).sum::<f64>().sqrt())
            .max(1e-8);
        let name = &model.params()[pi].name;
        assert!(diff / scale < 1e-3, "{name}: relative error {}", diff / scale);
    }
}

#[test]
fn both_heads_reach_their_parameters() {
    let cfg = ModelConfig {
        hidden_channels: vec![4],
        frame_time: 16,
        frame_mel: 16,
        ..ModelConfig::toy()
    };
    let mut model = AfpModel::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (inputs, targets) = raw_batch(&cfg, 4, &mut rng);
    let (out, trace) = model.forward_train_raw(&inputs).unwrap();

    // pairwise loss alone reaches every encoder stage
    let logits: Vec<Vec<f64>> = out.pooled.iter().map(|v| v.values.clone()).collect();
    let pair = batch_pair_loss_with_grad(&logits, &PairLossConfig::default()).unwrap();
    let zeros = vec![vec![0.0; cfg.frame_time * cfg.frame_mel]; 4];
    model.zero_grad();
    model.backward(&trace, &zeros, Some(&pair.grad));
    for p in model.encoder_params() {
        if p.name.ends_with(".wx") {
            assert!(p.grad.iter().any(|g| *g != 0.0), "{} has zero pair gradient", p.name);
        }
    }
    let decoder_touched = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with("dec") || p.name.starts_with("out"))
        .any(|p| p.grad.iter().any(|g| *g != 0.0));
    assert!(!decoder_touched, "pairwise loss must not reach the decoder");

    // MSE reaches the decoder
    let (_, d_pred) = mse_and_grad(&out.predictions, &targets);
    model.zero_grad();
    model.backward(&trace, &d_pred, None);
    for p in model.params() {
        if p.name.starts_with("dec") && p.name.ends_with(".wx") || p.name == "out.weight" {
            assert!(p.grad.iter().any(|g| *g != 0.0), "{} has zero mse gradient", p.name);
        }
    }
}

#[test]
fn unseeded_decoder_variant_trains() {
    let cfg = ModelConfig {
        decoder_seeded: false,
        ..ModelConfig::toy()
    };
    let mut model = AfpModel::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (inputs, targets) = raw_batch(&cfg, 3, &mut rng);
    let (out, trace) = model.forward_train_raw(&inputs).unwrap();
    let (_, d_pred) = mse_and_grad(&out.predictions, &targets);
    model.zero_grad();
    model.backward(&trace, &d_pred, None);
    assert!(model.params().iter().all(|p| p.grad.iter().all(|g| g.is_finite())));
}
