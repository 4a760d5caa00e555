use std::sync::Arc;

use pairfeat::audio::{FrameSequence, MelFrame};
use pairfeat::eval::{
    accumulate_distributions, extract_features, hungarian_accuracy, kmeans_with, train_linear_classifier,
    ClassifierConfig, Split,
};
use pairfeat::model::{feature_distribution, AfpModel, FeatureDistribution, FeatureVector, ModelConfig};
use pairfeat::pairloss::{batch_pair_loss, kl_divergence, pairwise_kl_matrix, similarity_ratio, PairLossConfig};
use proptest::prelude::*;

fn logits(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, k)
}

fn dist(values: Vec<f64>) -> FeatureDistribution {
    feature_distribution(&FeatureVector { values }).unwrap()
}

fn batch(n: std::ops::Range<usize>, k: usize) -> impl Strategy<Value = Vec<FeatureDistribution>> {
    prop::collection::vec(logits(k), n).prop_map(|rows| rows.into_iter().map(dist).collect())
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in logits(12)) {
        let d = dist(v);
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_self(a in logits(8), b in logits(8)) {
        let (p, q) = (dist(a), dist(b));
        prop_assert!(kl_divergence(p.probs(), q.probs(), 1e-10).unwrap() >= -1e-15);
        prop_assert!(kl_divergence(p.probs(), p.probs(), 1e-10).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ratio_mean_is_one(b in batch(2..10, 6)) {
        let kl = pairwise_kl_matrix(&b, 1e-10).unwrap();
        let f = similarity_ratio(&kl, true);
        let n = b.len();
        let mean: f64 = f.iter().flatten().sum::<f64>() / (n * n) as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9);
        prop_assert!((0..n).all(|i| kl[i][i] == 0.0));
    }

    #[test]
    fn pair_loss_is_non_negative_and_order_free(b in batch(2..8, 5), rot in 0usize..8) {
        let cfg = PairLossConfig::default();
        let l = batch_pair_loss(&b, &cfg).unwrap();
        prop_assert!(l >= 0.0);
        let mut r = b.clone();
        r.rotate_left(rot % b.len());
        prop_assert!((batch_pair_loss(&r, &cfg).unwrap() - l).abs() < 1e-9 * l.max(1.0));
    }

    #[test]
    fn hungarian_beats_identity_and_ignores_cluster_names(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60),
        shift in 0usize..5,
    ) {
        let (clusters, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let (acc, _) = hungarian_accuracy(&clusters, &labels).unwrap();
        let identity = clusters.iter().zip(&labels).filter(|(c, l)| c == l).count() as f64 / labels.len() as f64;
        prop_assert!(acc >= identity - 1e-12);
        prop_assert!(acc <= 1.0);
        let renamed: Vec<usize> = clusters.iter().map(|c| (c + shift) % 5).collect();
        prop_assert_eq!(hungarian_accuracy(&renamed, &labels).unwrap().0, acc);
    }

    #[test]
    fn kmeans_inertia_never_rises(
        pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 6..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let r = kmeans_with(&pts, k, 2, 100, seed).unwrap();
        prop_assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert!(r.assignments.iter().all(|&a| a < k));
    }
}

fn frame(seed: u64, index: usize) -> Arc<MelFrame> {
    let values = (0..64)
        .map(|i| ((i as u64 * 31 + seed * 7 + index as u64 * 13) % 17) as f64 / 8.0 - 1.0)
        .collect();
    Arc::new(MelFrame::new(values, 8, 8, 0.0, index).unwrap())
}

fn sequence(seed: u64, label: &str) -> FrameSequence {
    let f: Vec<_> = (0..4).map(|i| frame(seed, i)).collect();
    FrameSequence::new([f[0].clone(), f[1].clone(), f[2].clone()], f[3].clone(), Some(label.into()), format!("s{seed}"))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn evaluation_leaves_encoder_untouched(seed in 0u64..1000, n in 4usize..12) {
        let model = AfpModel::new(ModelConfig::toy(), seed).unwrap();
        let before = model.encoder_fingerprint();
        let cats = vec!["a".to_string(), "b".to_string()];
        let seqs: Vec<_> = (0..n).map(|i| sequence(seed + i as u64, &cats[i % 2])).collect();
        let table = extract_features(&model, &seqs, &cats, Split::Train).unwrap();
        train_linear_classifier(&table.rows, &table.labels, 2, &ClassifierConfig { epochs: 20, ..Default::default() })
            .unwrap();
        prop_assert_eq!(model.encoder_fingerprint(), before);

        for c in &cats {
            let acc = accumulate_distributions(&table, c).unwrap();
            prop_assert!((acc.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(acc.iter().all(|&p| p >= 0.0));
        }
    }
}
