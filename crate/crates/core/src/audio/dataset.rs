use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One WAV file of a `<root>/<category>/*.wav` dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub category: String,
    /// `<category>/<file stem>`, unique within the dataset.
    pub source_id: String,
}

/// Lists every `.wav` below the category directories of `root`, sorted by
/// category then file name.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let root = root.as_ref();
    let mut categories: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    categories.sort();

    let mut entries = Vec::new();
    for dir in categories {
        let category = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
            })
            .collect();
        files.sort();
        for path in files {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            entries.push(DatasetEntry {
                source_id: format!("{category}/{stem}"),
                category: category.clone(),
                path,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no <category>/*.wav files under {}",
            root.display()
        )));
    }
    Ok(entries)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Clip-level split, stratified by category and seeded.
///
/// `clips` are `(source_id, category)` pairs. Each category keeps
/// `round(train_fraction * n)` clips for training, clamped so that a
/// category with at least two clips contributes to both sides.
pub fn split_clips(
    clips: &[(String, String)],
    train_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_category: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, cat) in clips {
        by_category.entry(cat.as_str()).or_default().push(id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitAssignment {
        train: Vec::new(),
        test: Vec::new(),
    };
    for ids in by_category.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let mut k = (train_fraction * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        split.train.extend(ids[..k].iter().map(|s| s.to_string()));
        split.test.extend(ids[k..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.test.sort();
    Ok(split)
}
