//! End-to-end steps shared by the command-line tool and the tests: dataset
//! preparation, split, normalization, training and evaluation.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::{
    build_sequences, extract_frames, load_waveform, read_frame_cache, scan_dataset, split_clips,
    write_frame_cache, CacheEntry, FrameCache, FrameSequence, FrontendConfig, MelFrame,
    NormalizationMode, NormalizationParams, SplitAssignment, WaveformClip,
};
use crate::checkpoint::{Checkpoint, DataContext};
use crate::config::RunConfig;
use crate::eval::{evaluate, extract_features, EvalConfig, Evaluation, Split};
use crate::model::AfpModel;
use crate::train::{EpochRecord, Trainer, TrainingMode};
use crate::{Error, Result};

/// Files written by [`Dataset::save_prepared`].
pub const PREPARED_META: &str = "prepared.json";
pub const PREPARED_FRAMES: &str = "frames.pffr";

/// Raw (unnormalized) log-mel frames of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub source_id: String,
    pub label: String,
    pub frames: Vec<MelFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frontend: FrontendConfig,
    /// Sorted distinct labels.
    pub categories: Vec<String>,
    pub clips: Vec<PreparedClip>,
}

#[derive(Serialize, Deserialize)]
struct PreparedMeta {
    frontend: FrontendConfig,
    categories: Vec<String>,
    clips: usize,
}

impl Dataset {
    fn from_prepared(frontend: FrontendConfig, clips: Vec<PreparedClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::InsufficientData("dataset has no clips".into()));
        }
        let categories: Vec<String> = clips
            .iter()
            .map(|c| c.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            frontend,
            categories,
            clips,
        })
    }

    /// Frames in-memory clips; every clip needs a label.
    pub fn from_clips(clips: &[WaveformClip], frontend: &FrontendConfig) -> Result<Self> {
        frontend.validate()?;
        let prepared = clips
            .iter()
            .map(|clip| {
                let label = clip
                    .label
                    .clone()
                    .ok_or_else(|| Error::InvalidInput(format!("{} has no label", clip.source_id)))?;
                Ok(PreparedClip {
                    source_id: clip.source_id.clone(),
                    label,
                    frames: extract_frames(clip, frontend)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_prepared(frontend.clone(), prepared)
    }

    /// Loads and frames a `<root>/<category>/*.wav` tree.
    pub fn from_wav_dir(root: impl AsRef<Path>, frontend: &FrontendConfig) -> Result<Self> {
        frontend.validate()?;
        let entries = scan_dataset(root)?;
        let prepared = entries
            .iter()
            .map(|e| {
                let mut clip = load_waveform(&e.path, frontend)?;
                clip.source_id = e.source_id.clone();
                let frames = extract_frames(&clip, frontend).map_err(|err| match err {
                    Error::ClipTooShort { samples, required } => Error::InvalidInput(format!(
                        "{}: {samples} samples, need at least {required}",
                        e.path.display()
                    )),
                    other => other,
                })?;
                Ok(PreparedClip {
                    source_id: e.source_id.clone(),
                    label: e.category.clone(),
                    frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_prepared(frontend.clone(), prepared)
    }

    /// Writes the frame cache plus a JSON description into `dir`.
    pub fn save_prepared(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (time_steps, mel_bins) = self.frontend.frame_shape();
        let cache = FrameCache {
            time_steps,
            mel_bins,
            entries: self
                .clips
                .iter()
                .map(|c| CacheEntry {
                    source_id: c.source_id.clone(),
                    label: Some(c.label.clone()),
                    frames: c.frames.clone(),
                })
                .collect(),
        };
        let frames = dir.join(PREPARED_FRAMES);
        write_frame_cache(&frames, &cache)?;
        let meta_path = dir.join(PREPARED_META);
        let meta = PreparedMeta {
            frontend: self.frontend.clone(),
            categories: self.categories.clone(),
            clips: self.clips.len(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Report(e.to_string()))?;
        std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
        Ok(vec![meta_path, frames.clone(), frames.with_extension("idx")])
    }

    pub fn load_prepared(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(PREPARED_META);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: PreparedMeta = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", meta_path.display())))?;
        let cache = read_frame_cache(dir.join(PREPARED_FRAMES), meta.frontend.hop_samples() as f64 / meta.frontend.sample_rate as f64)?;
        if (cache.time_steps, cache.mel_bins) != meta.frontend.frame_shape() {
            return Err(Error::Shape("cache geometry differs from its frontend config".into()));
        }
        let clips = cache
            .entries
            .into_iter()
            .map(|e| {
                let label = e
                    .label
                    .ok_or_else(|| Error::InvalidInput(format!("{} has no label", e.source_id)))?;
                Ok(PreparedClip {
                    source_id: e.source_id,
                    label,
                    frames: e.frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_prepared(meta.frontend, clips)
    }

    /// A prepared directory when it holds [`PREPARED_META`], otherwise a WAV
    /// tree framed with `frontend`.
    pub fn load(path: impl AsRef<Path>, frontend: &FrontendConfig) -> Result<Self> {
        let path = path.as_ref();
        if path.join(PREPARED_META).is_file() {
            Self::load_prepared(path)
        } else {
            Self::from_wav_dir(path, frontend)
        }
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<SplitAssignment> {
        let pairs: Vec<(String, String)> = self
            .clips
            .iter()
            .map(|c| (c.source_id.clone(), c.label.clone()))
            .collect();
        split_clips(&pairs, train_fraction, seed)
    }

    fn clips_by_id<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a PreparedClip>> {
        let index: HashMap<&str, &PreparedClip> =
            self.clips.iter().map(|c| (c.source_id.as_str(), c)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("clip {id} is not in the dataset")))
            })
            .collect()
    }

    /// Normalization fitted on every frame of the given clips.
    pub fn fit_normalization(&self, ids: &[String], mode: NormalizationMode) -> Result<NormalizationParams> {
        let clips = self.clips_by_id(ids)?;
        let frames: Vec<&MelFrame> = clips.iter().flat_map(|c| c.frames.iter()).collect();
        NormalizationParams::fit(&frames, mode)
    }

    /// Normalized sequences of the given clips, in `ids` order.
    pub fn sequences(&self, ids: &[String], norm: &NormalizationParams) -> Result<Vec<FrameSequence>> {
        let mut out = Vec::new();
        for clip in self.clips_by_id(ids)? {
            let frames = clip
                .frames
                .iter()
                .map(|f| norm.apply(f).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            out.extend(build_sequences(&frames, Some(&clip.label), &clip.source_id)?);
        }
        Ok(out)
    }

    /// Split + normalization for a run configuration.
    pub fn context(&self, cfg: &RunConfig) -> Result<DataContext> {
        if self.frontend != cfg.frontend {
            return Err(Error::Config(
                "dataset was prepared with a different frontend config".into(),
            ));
        }
        let split = self.split(cfg.data.train_fraction, cfg.data.split_seed)?;
        let normalization = self.fit_normalization(&split.train, cfg.frontend.normalization)?;
        Ok(DataContext {
            frontend: self.frontend.clone(),
            normalization,
            categories: self.categories.clone(),
            train_ids: split.train,
            test_ids: split.test,
            split_seed: cfg.data.split_seed,
        })
    }
}

/// Trains one model. With `checkpoint` set the full state is written after
/// every epoch; with `resume` the run continues from that file.
pub fn train_run(
    data: &Dataset,
    cfg: &RunConfig,
    mode: TrainingMode,
    checkpoint: Option<&Path>,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let ctx = data.context(cfg)?;
    let sequences = data.sequences(&ctx.train_ids, &ctx.normalization)?;

    let mut trainer = match (resume, checkpoint) {
        (true, Some(path)) => {
            let (trainer, stored) = Trainer::resume(path, Some(&cfg.model))?;
            if stored.as_ref() != Some(&ctx) {
                return Err(Error::Checkpoint(
                    "checkpoint was trained on a different split or dataset".into(),
                ));
            }
            if trainer.mode() != mode || trainer.config() != &cfg.training {
                return Err(Error::Checkpoint(
                    "checkpoint training mode or config differs from this run".into(),
                ));
            }
            trainer
        }
        (true, None) => return Err(Error::Config("resume needs a checkpoint path".into())),
        (false, _) => Trainer::new(
            AfpModel::new(cfg.model.clone(), cfg.training.seed)?,
            cfg.training.clone(),
            mode,
        )?,
    };

    while !trainer.is_finished() {
        let record = trainer.run_epoch(&sequences)?.clone();
        if let Some(path) = checkpoint {
            trainer.save(path, Some(&ctx))?;
        }
        on_epoch(&record);
    }
    if let Some(path) = checkpoint {
        trainer.save(path, Some(&ctx))?;
    }
    Ok(trainer.to_checkpoint(Some(ctx)))
}

/// Scores a trained checkpoint on the dataset it was trained on.
pub fn evaluate_run(ckpt: &Checkpoint, data: &Dataset, cfg: &EvalConfig) -> Result<Evaluation> {
    let ctx = ckpt
        .data
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no dataset context".into()))?;
    if ctx.frontend != data.frontend {
        return Err(Error::Checkpoint("checkpoint and dataset use different frontend configs".into()));
    }
    if ctx.categories != data.categories {
        return Err(Error::Checkpoint(format!(
            "checkpoint categories {:?} differ from dataset categories {:?}",
            ctx.categories, data.categories
        )));
    }
    let (ft, fm) = (ckpt.model.config().frame_time, ckpt.model.config().frame_mel);
    if (ft, fm) != data.frontend.frame_shape() {
        return Err(Error::Checkpoint("model frame shape differs from the dataset".into()));
    }
    let train_seq = data
        .sequences(&ctx.train_ids, &ctx.normalization)
        .map_err(|e| Error::Checkpoint(format!("dataset does not match checkpoint: {e}")))?;
    let test_seq = data
        .sequences(&ctx.test_ids, &ctx.normalization)
        .map_err(|e| Error::Checkpoint(format!("dataset does not match checkpoint: {e}")))?;
    let train = extract_features(&ckpt.model, &train_seq, &ctx.categories, Split::Train)?;
    let test = extract_features(&ckpt.model, &test_seq, &ctx.categories, Split::Test)?;
    let mut eval = evaluate(&train, &test, cfg)?;
    eval.report.seeds.split = Some(ctx.split_seed);
    eval.report.seeds.training = ckpt.training_seed();
    eval.report.seeds.model = ckpt.training_seed();
    Ok(eval)
}

/// Train then evaluate in one call.
pub fn run_experiment(data: &Dataset, cfg: &RunConfig, mode: TrainingMode) -> Result<(Checkpoint, Evaluation)> {
    let ckpt = train_run(data, cfg, mode, None, false, |_| {})?;
    let eval = evaluate_run(&ckpt, data, &cfg.evaluation)?;
    Ok((ckpt, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::{generate_corpus, SynthSpec};

    /// Small frames (10 x 8) on short clips so the whole pipeline runs in
    /// well under a second.
    pub(crate) fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.frontend = FrontendConfig {
            frame_seconds: 0.64,
            hop_fraction: 0.5,
            stft_window: 2048,
            stft_hop: 1024,
            mel_bins: 8,
            ..FrontendConfig::default()
        };
        cfg.model = ModelConfig {
            code_channels: 4,
            hidden_channels: vec![],
            frame_time: cfg.frontend.time_steps(),
            frame_mel: 8,
            ..ModelConfig::default()
        };
        cfg.training.batch_size = 4;
        cfg.training.stage1_epochs = 1;
        cfg.training.stage2_epochs = 1;
        cfg.training.baseline_epochs = 2;
        cfg.evaluation.tsne.perplexity = 3.0;
        cfg.evaluation.tsne.iterations = 100;
        cfg.evaluation.classifier.epochs = 50;
        cfg
    }

    fn tiny_dataset(cfg: &RunConfig) -> Dataset {
        let spec = SynthSpec {
            clips_per_class: 4,
            clip_seconds: 2.56,
            ..SynthSpec::default()
        };
        Dataset::from_clips(&generate_corpus(&spec).unwrap(), &cfg.frontend).unwrap()
    }

    #[test]
    fn tiny_config_is_valid() {
        let cfg = tiny_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.frontend.frame_shape(), (10, 8));
    }

    #[test]
    fn prepared_round_trip_keeps_geometry() {
        let cfg = tiny_config();
        let data = tiny_dataset(&cfg);
        let dir = tempfile::tempdir().unwrap();
        data.save_prepared(dir.path()).unwrap();
        let back = Dataset::load(dir.path(), &FrontendConfig::default()).unwrap();
        assert_eq!(back.categories, data.categories);
        assert_eq!(back.clips.len(), data.clips.len());
        for (a, b) in back.clips.iter().zip(&data.clips) {
            assert_eq!(a.source_id, b.source_id);
            assert_eq!(a.frames.len(), b.frames.len());
            for (x, y) in a.frames[0].values.iter().zip(&b.frames[0].values) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn split_is_stratified_and_normalization_uses_train_only() {
        let cfg = tiny_config();
        let data = tiny_dataset(&cfg);
        let ctx = data.context(&cfg).unwrap();
        assert_eq!(ctx.train_ids.len(), 12);
        assert_eq!(ctx.test_ids.len(), 4);
        let direct = data.fit_normalization(&ctx.train_ids, NormalizationMode::Global).unwrap();
        assert_eq!(ctx.normalization, direct);
    }

    #[test]
    fn train_then_evaluate() {
        let cfg = tiny_config();
        let data = tiny_dataset(&cfg);
        let (ckpt, eval) = run_experiment(&data, &cfg, TrainingMode::PairLoss).unwrap();
        let (_, log) = ckpt.training().unwrap();
        assert_eq!(log.records.len(), 2);
        let r = &eval.report;
        assert!((0.0..=1.0).contains(&r.classifier_accuracy));
        assert!((0.0..=1.0).contains(&r.clustering_accuracy));
        assert_eq!(r.categories.len(), 4);
        assert_eq!(r.seeds.split, Some(0));
    }

    #[test]
    fn evaluation_rejects_foreign_dataset() {
        let cfg = tiny_config();
        let data = tiny_dataset(&cfg);
        let ckpt = train_run(&data, &cfg, TrainingMode::Baseline, None, false, |_| {}).unwrap();
        let mut other = data.clone();
        other.clips.retain(|c| c.label != "tone");
        other.categories.retain(|c| c != "tone");
        assert!(matches!(
            evaluate_run(&ckpt, &other, &cfg.evaluation),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn resume_continues_an_interrupted_run() {
        let cfg = tiny_config();
        let data = tiny_dataset(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let full = train_run(&data, &cfg, TrainingMode::PairLoss, None, false, |_| {}).unwrap();

        // an interrupted run: one epoch done, state on disk
        let ctx = data.context(&cfg).unwrap();
        let seqs = data.sequences(&ctx.train_ids, &ctx.normalization).unwrap();
        let model = AfpModel::new(cfg.model.clone(), cfg.training.seed).unwrap();
        let mut partial = Trainer::new(model, cfg.training.clone(), TrainingMode::PairLoss).unwrap();
        partial.run_epoch(&seqs).unwrap();
        partial.save(&path, Some(&ctx)).unwrap();

        let resumed = train_run(&data, &cfg, TrainingMode::PairLoss, Some(&path), true, |_| {}).unwrap();
        assert_eq!(resumed.model.params(), full.model.params());
        assert_eq!(
            resumed.training().unwrap().1.without_timing(),
            full.training().unwrap().1.without_timing()
        );
    }
}
