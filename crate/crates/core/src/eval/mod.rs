//! Frozen-encoder evaluation: a linear classifier on the feature
//! distributions, and clustering accuracy of k-means on their t-SNE
//! embedding matched to labels by the Hungarian algorithm.

mod classifier;
mod hungarian;
mod kmeans;
mod report;
mod tsne;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use classifier::{
    classifier_accuracy, confusion_matrix, train_linear_classifier, ClassifierConfig, LinearClassifier,
};
pub use hungarian::{best_matching, hungarian_accuracy, min_cost_assignment, Contingency};
pub use kmeans::{kmeans, kmeans_with, KMeansResult};
pub use report::{emit_report, EvaluationReport, ReportSeeds, REPORT_FILES};
pub use tsne::{silhouette_score, tsne_embed, tsne_embed_with, TsneConfig};

use crate::audio::FrameSequence;
use crate::model::AfpModel;
use crate::pairloss::kl_divergence;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One row per frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub sample_ids: Vec<String>,
    /// Feature distributions (softmax of the pooled code).
    pub rows: Vec<Vec<f64>>,
    /// Pooled code before the softmax.
    pub pooled: Vec<Vec<f64>>,
    /// Indices into `categories`.
    pub labels: Vec<usize>,
    pub categories: Vec<String>,
    pub split: Split,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn inputs(&self, kind: FeatureInput) -> &[Vec<f64>] {
        match kind {
            FeatureInput::Distribution => &self.rows,
            FeatureInput::Pooled => &self.pooled,
        }
    }
}

/// Runs the frozen model over `sequences`. Labels must name one of
/// `categories`.
pub fn extract_features(
    model: &AfpModel,
    sequences: &[FrameSequence],
    categories: &[String],
    split: Split,
) -> Result<FeatureTable> {
    let mut labels = Vec::with_capacity(sequences.len());
    let mut sample_ids = Vec::with_capacity(sequences.len());
    for s in sequences {
        let name = s
            .label
            .as_deref()
            .ok_or_else(|| Error::UnknownCategory(format!("{} has no label", s.source_id)))?;
        let idx = categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))?;
        labels.push(idx);
        sample_ids.push(format!("{}#{}", s.source_id, s.inputs[0].frame_index));
    }
    let refs: Vec<&FrameSequence> = sequences.iter().collect();
    let feats = model.features(&refs, 32)?;
    let (pooled, rows) = feats
        .into_iter()
        .map(|(v, d)| (v.values, d.probs().to_vec()))
        .unzip();
    Ok(FeatureTable {
        sample_ids,
        rows,
        pooled,
        labels,
        categories: categories.to_vec(),
        split,
    })
}

/// Normalized elementwise sum of all rows of `category`.
pub fn accumulate_distributions(table: &FeatureTable, category: &str) -> Result<Vec<f64>> {
    let idx = table
        .categories
        .iter()
        .position(|c| c == category)
        .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
    let mut acc = vec![0.0; table.width()];
    let mut any = false;
    for (row, _) in table.rows.iter().zip(&table.labels).filter(|(_, &l)| l == idx) {
        any = true;
        acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
    }
    if !any {
        return Err(Error::UnknownCategory(format!("{category} has no samples")));
    }
    let total: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

/// Mean KL divergence over ordered pairs of distinct categories.
pub fn mean_category_kl(accumulated: &[Vec<f64>], eps: f64) -> Result<f64> {
    let c = accumulated.len();
    if c < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                sum += kl_divergence(&accumulated[i], &accumulated[j], eps)?;
            }
        }
    }
    Ok(sum / (c * (c - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureInput {
    Distribution,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSpace {
    /// k-means on the 2-D t-SNE embedding.
    Embedding,
    /// k-means directly on the K-dim rows.
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    /// Number of clusters; defaults to the number of categories.
    pub clusters: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iterations: usize,
    pub cluster_space: ClusterSpace,
    pub classifier_input: FeatureInput,
    pub classifier: ClassifierConfig,
    pub tsne: TsneConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clusters: None,
            kmeans_restarts: 10,
            kmeans_max_iterations: 300,
            cluster_space: ClusterSpace::Embedding,
            classifier_input: FeatureInput::Distribution,
            classifier: ClassifierConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

/// Everything produced by [`evaluate`], ready for [`emit_report`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub embedding: Vec<[f64; 2]>,
    pub clusters: Vec<usize>,
    pub test_ids: Vec<String>,
    pub test_labels: Vec<usize>,
}

/// Classifier trained on `train`, scored on `test`; clustering on `test`
/// only. Accumulated distributions come from `train`.
pub fn evaluate(train: &FeatureTable, test: &FeatureTable, cfg: &EvalConfig) -> Result<Evaluation> {
    if train.categories != test.categories {
        return Err(Error::InvalidInput("train and test category sets differ".into()));
    }
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test table".into()));
    }
    let classes = train.categories.len();
    let clf = train_linear_classifier(
        train.inputs(cfg.classifier_input),
        &train.labels,
        classes,
        &cfg.classifier,
    )?;
    let test_rows = test.inputs(cfg.classifier_input);
    let classifier_acc = classifier_accuracy(&clf, test_rows, &test.labels)?;
    let confusion = confusion_matrix(&clf, test_rows, &test.labels);

    let tsne_seed = cfg.seed;
    let kmeans_seed = cfg.seed.wrapping_add(1);
    let embedding = tsne_embed_with(&test.rows, &cfg.tsne, tsne_seed)?;
    let points: Vec<Vec<f64>> = match cfg.cluster_space {
        ClusterSpace::Embedding => embedding.iter().map(|p| p.to_vec()).collect(),
        ClusterSpace::Features => test.rows.clone(),
    };
    let k = cfg.clusters.unwrap_or(classes);
    let km = kmeans_with(&points, k, cfg.kmeans_restarts, cfg.kmeans_max_iterations, kmeans_seed)?;
    let (cluster_acc, mapping) = hungarian_accuracy(&km.assignments, &test.labels)?;
    let contingency = {
        let mut m = vec![vec![0; classes]; k];
        for (&c, &l) in km.assignments.iter().zip(&test.labels) {
            m[c][l] += 1;
        }
        m
    };

    let mut accumulated = BTreeMap::new();
    let mut acc_list = Vec::new();
    for c in &train.categories {
        let d = accumulate_distributions(train, c)?;
        acc_list.push(d.clone());
        accumulated.insert(c.clone(), d);
    }

    let report = EvaluationReport {
        classifier_accuracy: classifier_acc,
        clustering_accuracy: cluster_acc,
        assignment: mapping
            .iter()
            .map(|(c, l)| (c.to_string(), train.categories[*l].clone()))
            .collect(),
        confusion,
        cluster_contingency: contingency,
        categories: train.categories.clone(),
        accumulated_distributions: accumulated,
        category_kl_mean: mean_category_kl(&acc_list, 1e-8)?,
        train_samples: train.len(),
        test_samples: test.len(),
        seeds: ReportSeeds {
            eval: cfg.seed,
            tsne: tsne_seed,
            kmeans: kmeans_seed,
            split: None,
            model: None,
            training: None,
        },
        config_echo: serde_json::to_value(cfg).map_err(|e| Error::Report(e.to_string()))?,
    };
    Ok(Evaluation {
        report,
        embedding,
        clusters: km.assignments,
        test_ids: test.sample_ids.clone(),
        test_labels: test.labels.clone(),
    })
}
