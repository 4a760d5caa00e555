//! TOML run configuration.
//!
//! ```toml
//! seed = 7            # optional; overrides every section seed
//! [data]
//! train_fraction = 0.75
//! [frontend]
//! mel_bins = 64
//! [model]
//! code_channels = 128
//! [training]
//! batch_size = 16
//! [training.pair_loss]
//! margin = 2.0
//! [evaluation]
//! kmeans_restarts = 10
//! ```
//!
//! Every field is optional and falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::FrontendConfig;
use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::train::TrainingConfig;
use crate::{Error, Result};

/// Environment variable consulted when neither a flag nor the config file
/// sets a global seed.
pub const SEED_ENV: &str = "PAIRFEAT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub evaluation: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must lie in (0, 1)".into()));
        }
        self.frontend.validate()?;
        self.model.validate()?;
        if self.model.frame_time != self.frontend.time_steps() || self.model.frame_mel != self.frontend.mel_bins {
            return Err(Error::Config(format!(
                "model frame {}x{} does not match frontend frame {}x{}",
                self.model.frame_time,
                self.model.frame_mel,
                self.frontend.time_steps(),
                self.frontend.mel_bins
            )));
        }
        self.training.validate()
    }

    /// Picks the global seed: `flag`, then the file's `seed`, then
    /// [`SEED_ENV`]. When one is found it replaces the split, training and
    /// evaluation seeds. Returns the seed applied, if any.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<Option<u64>> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env);
        if let Some(s) = seed {
            self.seed = Some(s);
            self.apply_seed(s);
        }
        Ok(seed)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.data.split_seed = seed;
        self.training.seed = seed;
        self.evaluation.seed = seed;
    }

    /// FNV-1a of the canonical JSON form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let h = json.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.training.stage1_epochs, 6);
        assert_eq!(cfg.model.code_channels, 128);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seed = Some(4);
        cfg.training.pair_loss.margin = 3.0;
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = RunConfig::from_toml_str(
            "[training]\nbatch_size = 8\n[training.pair_loss]\nmargin = 1.5\n[evaluation.tsne]\nperplexity = 10.0\n",
        )
        .unwrap();
        assert_eq!(cfg.training.batch_size, 8);
        assert_eq!(cfg.training.pair_loss.margin, 1.5);
        assert_eq!(cfg.evaluation.tsne.perplexity, 10.0);
    }

    #[test]
    fn rejects_unknown_keys_and_inconsistent_shapes() {
        assert!(RunConfig::from_toml_str("[model]\nwidth = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[frontend]\nmel_bins = 32\n").is_err());
        assert!(RunConfig::from_toml_str("[frontend]\nmel_bins = 32\n[model]\nframe_mel = 32\n").is_ok());
        assert!(RunConfig::from_toml_str("[data]\ntrain_fraction = 1.0\n").is_err());
    }

    #[test]
    fn flag_seed_overrides_sections() {
        let mut cfg = RunConfig::from_toml_str("seed = 3\n[training]\nseed = 9\n").unwrap();
        assert_eq!(cfg.resolve_seed(Some(5)).unwrap(), Some(5));
        assert_eq!((cfg.training.seed, cfg.data.split_seed, cfg.evaluation.seed), (5, 5, 5));
        let mut cfg = RunConfig::from_toml_str("seed = 3\n").unwrap();
        cfg.resolve_seed(None).unwrap();
        assert_eq!(cfg.training.seed, 3);
    }

    #[test]
    fn shipped_default_config_matches_defaults() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
        assert_eq!(RunConfig::load(path).unwrap(), RunConfig::default());
    }
}
