//! `manifest.json`: what a command ran with and what it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub started: f64,
    pub finished: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub seeds: serde_json::Value,
    pub stages: Vec<Stage>,
    pub artifacts: Vec<PathBuf>,
    pub complete: bool,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    /// Starts a manifest in `dir` and writes it immediately, marked
    /// incomplete.
    pub fn begin(dir: &Path, command: &str, config_hash: Option<String>, seeds: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let run_id = format!(
            "{command}-{}-{}",
            config_hash.as_deref().map_or("noconfig", |h| &h[..8.min(h.len())]),
            seeds.get("seed").and_then(|s| s.as_u64()).map_or("-".to_string(), |s| s.to_string())
        );
        let m = Self {
            run_id,
            command: command.into(),
            config_hash,
            seeds,
            stages: Vec::new(),
            artifacts: Vec::new(),
            complete: false,
            path: dir.join(MANIFEST_FILE),
        };
        m.write()?;
        Ok(m)
    }

    pub fn stage(&mut self, name: &str) -> Result<()> {
        self.end_stage();
        self.stages.push(Stage {
            name: name.into(),
            started: now(),
            finished: None,
        });
        self.write()
    }

    fn end_stage(&mut self) {
        if let Some(s) = self.stages.last_mut() {
            s.finished.get_or_insert_with(now);
        }
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.artifacts.contains(&p) {
            self.artifacts.push(p);
        }
    }

    /// Marks the run complete once every artifact exists.
    pub fn finish(mut self) -> Result<()> {
        self.end_stage();
        if let Some(missing) = self.artifacts.iter().find(|p| !p.exists()) {
            self.write()?;
            bail!("artifact {} was not written", missing.display());
        }
        self.complete = true;
        self.write()
    }

    fn write(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&self.path, json + "\n").with_context(|| format!("writing {}", self.path.display()))
    }
}
