//! Report bundle written by `evaluate`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::Evaluation;
use crate::{Error, Result};

/// File names written by [`emit_report`], in order.
pub const REPORT_FILES: [&str; 5] = [
    "report.json",
    "confusion.csv",
    "embedding.csv",
    "tsne.png",
    "distributions.png",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSeeds {
    pub eval: u64,
    pub tsne: u64,
    pub kmeans: u64,
    pub split: Option<u64>,
    pub model: Option<u64>,
    pub training: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classifier_accuracy: f64,
    pub clustering_accuracy: f64,
    /// Cluster id → category name.
    pub assignment: BTreeMap<String, String>,
    /// Classifier confusion on the test split, `[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Test-split counts, `[cluster][true]`.
    pub cluster_contingency: Vec<Vec<usize>>,
    pub categories: Vec<String>,
    /// Per category, the normalized sum of its training distributions.
    pub accumulated_distributions: BTreeMap<String, Vec<f64>>,
    /// Mean KL over ordered pairs of distinct accumulated distributions.
    pub category_kl_mean: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seeds: ReportSeeds,
    pub config_echo: serde_json::Value,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Report(format!("malformed report: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

fn color(i: usize) -> Rgb<u8> {
    Rgb(PALETTE[i % PALETTE.len()])
}

/// Writes the five report files into `out_dir` (created if missing) and
/// returns their paths.
pub fn emit_report(eval: &Evaluation, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = REPORT_FILES.iter().map(|f| dir.join(f)).collect();
    let write = |p: &Path, s: String| fs::write(p, s).map_err(|e| Error::io(p, e));
    let r = &eval.report;

    write(&paths[0], r.to_json()? + "\n")?;

    let mut csv = String::from("true\\predicted");
    for c in &r.categories {
        let _ = write!(csv, ",{c}");
    }
    csv.push('\n');
    for (c, row) in r.categories.iter().zip(&r.confusion) {
        csv.push_str(c);
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write(&paths[1], csv)?;

    let mut csv = String::from("sample_id,x,y,label,cluster\n");
    for i in 0..eval.embedding.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            eval.test_ids[i],
            eval.embedding[i][0],
            eval.embedding[i][1],
            r.categories[eval.test_labels[i]],
            eval.clusters[i]
        );
    }
    write(&paths[2], csv)?;

    let save = |img: RgbImage, p: &Path| img.save(p).map_err(|e| Error::Report(format!("{}: {e}", p.display())));
    save(scatter_plot(&eval.embedding, &eval.test_labels), &paths[3])?;
    let dists: Vec<&Vec<f64>> = r.categories.iter().map(|c| &r.accumulated_distributions[c]).collect();
    save(bar_panels(&dists), &paths[4])?;
    Ok(paths)
}

fn scatter_plot(points: &[[f64; 2]], labels: &[usize]) -> RgbImage {
    let size = 640u32;
    let margin = 20.0;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = size as f64 - 2.0 * margin;
    for (p, &l) in points.iter().zip(labels) {
        let px = margin + (p[0] - lo[0]) / (hi[0] - lo[0]).max(1e-12) * span;
        let py = margin + (hi[1] - p[1]) / (hi[1] - lo[1]).max(1e-12) * span;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                if dx * dx + dy * dy <= 9 {
                    let (x, y) = (px as i32 + dx, py as i32 + dy);
                    if x >= 0 && y >= 0 && (x as u32) < size && (y as u32) < size {
                        img.put_pixel(x as u32, y as u32, color(l));
                    }
                }
            }
        }
    }
    img
}

/// One horizontal strip per category; bar heights share a common scale.
fn bar_panels(dists: &[&Vec<f64>]) -> RgbImage {
    let k = dists.first().map_or(1, |d| d.len().max(1));
    let bar = (640 / k).max(2) as u32;
    let width = bar * k as u32 + 20;
    let panel = 120u32;
    let height = panel * dists.len().max(1) as u32;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let top = dists.iter().flat_map(|d| d.iter()).fold(1e-12f64, |a, &b| a.max(b));
    for (c, d) in dists.iter().enumerate() {
        let base = (c as u32 + 1) * panel - 10;
        for x in 10..width - 10 {
            img.put_pixel(x, base, Rgb([0, 0, 0]));
        }
        for (j, v) in d.iter().enumerate() {
            let h = ((v / top) * (panel - 20) as f64).round() as u32;
            for x in 0..bar.saturating_sub(1) {
                for y in 0..h {
                    img.put_pixel(10 + j as u32 * bar + x, base - 1 - y, color(c));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Evaluation {
        let report = EvaluationReport {
            classifier_accuracy: 0.75,
            clustering_accuracy: 0.5,
            assignment: BTreeMap::from([("0".into(), "a".into()), ("1".into(), "b".into())]),
            confusion: vec![vec![2, 0], vec![1, 1]],
            cluster_contingency: vec![vec![1, 1], vec![1, 1]],
            categories: vec!["a".into(), "b".into()],
            accumulated_distributions: BTreeMap::from([
                ("a".into(), vec![0.7, 0.3]),
                ("b".into(), vec![0.1, 0.9]),
            ]),
            category_kl_mean: 0.8,
            train_samples: 8,
            test_samples: 4,
            seeds: ReportSeeds {
                eval: 1,
                tsne: 1,
                kmeans: 2,
                split: Some(3),
                model: None,
                training: None,
            },
            config_echo: serde_json::json!({"perplexity": 30.0}),
        };
        Evaluation {
            report,
            embedding: vec![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [-1.0, 0.5]],
            clusters: vec![0, 1, 0, 1],
            test_ids: (0..4).map(|i| format!("x/{i}#0")).collect(),
            test_labels: vec![0, 0, 1, 1],
        }
    }

    #[test]
    fn writes_five_files_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let eval = sample();
        let paths = emit_report(&eval, dir.path().join("out")).unwrap();
        assert_eq!(paths.len(), 5);
        for (p, name) in paths.iter().zip(REPORT_FILES) {
            assert!(p.ends_with(name) && p.is_file());
        }
        let back = EvaluationReport::load(&paths[0]).unwrap();
        assert_eq!(back, eval.report);
        let emb = fs::read_to_string(&paths[2]).unwrap();
        assert!(emb.starts_with("sample_id,x,y,label,cluster\nx/0#0,0,1,a,0\n"));
        let conf = fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(conf, "true\\predicted,a,b\na,2,0\nb,1,1\n");
    }

    #[test]
    fn unwritable_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, "x").unwrap();
        assert!(emit_report(&sample(), file.join("sub")).is_err());
    }

    #[test]
    fn malformed_json_errors() {
        assert!(matches!(EvaluationReport::from_json("{"), Err(Error::Report(_))));
    }
}
