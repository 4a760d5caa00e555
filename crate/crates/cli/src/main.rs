//! `pairfeat`: synthesize a corpus, prepare frames, train, evaluate and
//! compare runs.

mod compare;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pairfeat::audio::FrontendConfig;
use pairfeat::checkpoint::Checkpoint;
use pairfeat::config::{RunConfig, SEED_ENV};
use pairfeat::eval::{emit_report, EvaluationReport};
use pairfeat::pipeline::{evaluate_run, train_run, Dataset};
use pairfeat::synth::{export_corpus, generate_corpus, SynthSpec};
use pairfeat::train::TrainingMode;

use compare::Comparison;
use manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.pfck";

#[derive(Parser)]
#[command(name = "pairfeat", version, about = "Unsupervised acoustic features with a pairwise KL loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus as `<out>/<class>/<id>.wav`.
    Synth {
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=8))]
        classes: u32,
        #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u32).range(1..))]
        per_class: u32,
        #[arg(long, default_value_t = 7.68)]
        seconds: f64,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Replace existing class directories.
        #[arg(long)]
        overwrite: bool,
    },
    /// Frame a WAV dataset into a reusable frame cache.
    Prepare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (PairLoss schedule or MSE-only baseline).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["pairloss", "baseline"])]
        mode: String,
        /// WAV tree or prepared directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from `<out>/checkpoint.pfck`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a trained checkpoint and write the report bundle.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only the `[evaluation]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Table of classifier and clustering accuracy for two reports.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        #[arg(long, num_args = 2, value_names = ["A", "B"], default_values = ["w/o PairLoss", "w/ PairLoss"])]
        labels: Vec<String>,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?,
        )),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn synth(
    classes: u32,
    per_class: u32,
    seconds: f64,
    snr_db: f64,
    seed: Option<u64>,
    out: &Path,
    overwrite: bool,
) -> Result<()> {
    let spec = SynthSpec {
        num_classes: classes as usize,
        clips_per_class: per_class as usize,
        clip_seconds: seconds,
        noise_snr_db: snr_db,
        seed: seed.or(env_seed()?).unwrap_or(0),
        ..SynthSpec::default()
    };
    let clips = generate_corpus(&spec)?;
    let n = export_corpus(&clips, out, overwrite)?;
    println!(
        "wrote {n} clips ({} classes x {}) to {}",
        spec.num_classes,
        spec.clips_per_class,
        out.display()
    );
    Ok(())
}

fn prepare(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let mut manifest = RunManifest::begin(out, "prepare", Some(cfg.hash()), serde_json::json!({}))?;
    manifest.stage("frontend")?;
    let dataset = Dataset::from_wav_dir(data, &cfg.frontend)?;
    for p in dataset.save_prepared(out)? {
        manifest.artifact(p);
    }
    let frames: usize = dataset.clips.iter().map(|c| c.frames.len()).sum();
    println!(
        "prepared {} clips, {frames} frames, categories {:?}",
        dataset.clips.len(),
        dataset.categories
    );
    manifest.finish()
}

fn train(
    config: Option<&Path>,
    mode: &str,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: bool,
) -> Result<()> {
    let mode: TrainingMode = mode.parse()?;
    let mut cfg = load_config(config)?;
    cfg.resolve_seed(seed)?;
    cfg.validate()?;
    let seeds = serde_json::json!({
        "seed": cfg.seed,
        "split": cfg.data.split_seed,
        "training": cfg.training.seed,
        "evaluation": cfg.evaluation.seed,
    });
    let mut manifest = RunManifest::begin(out, "train", Some(cfg.hash()), seeds)?;

    manifest.stage("load")?;
    let dataset = Dataset::load(data, &cfg.frontend)?;
    eprintln!("{} clips in {} categories", dataset.clips.len(), dataset.categories.len());

    manifest.stage("train")?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let ckpt = train_run(&dataset, &cfg, mode, Some(&ckpt_path), resume, |r| {
        eprintln!(
            "epoch {:>2} [{}] mse {:.5} pair {:.4} ({:.1}s)",
            r.epoch, r.stage, r.mse, r.pair_loss, r.seconds
        );
    })?;
    manifest.artifact(&ckpt_path);

    manifest.stage("write")?;
    let (_, log) = ckpt.training().expect("trainer state present");
    let log_path = out.join("training_log.csv");
    log.write_csv(&log_path)?;
    manifest.artifact(&log_path);
    let ctx = ckpt.data.as_ref().expect("data context present");
    let norm_path = out.join("normalization.json");
    std::fs::write(&norm_path, serde_json::to_string_pretty(&ctx.normalization)? + "\n")?;
    manifest.artifact(&norm_path);
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?)?;
    manifest.artifact(&cfg_path);
    println!("trained {mode} model: {} epochs, checkpoint {}", log.records.len(), ckpt_path.display());
    manifest.finish()
}

fn evaluate(checkpoint: &Path, data: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mut eval_cfg = load_config(config)?.evaluation;
    if let Some(s) = seed.or(env_seed()?) {
        eval_cfg.seed = s;
    }
    let mut manifest = RunManifest::begin(
        out,
        "evaluate",
        None,
        serde_json::json!({"seed": seed, "evaluation": eval_cfg.seed}),
    )?;
    manifest.stage("load")?;
    let frontend = ckpt
        .data
        .as_ref()
        .map(|c| c.frontend.clone())
        .unwrap_or_else(FrontendConfig::default);
    let dataset = Dataset::load(data, &frontend)?;
    manifest.stage("evaluate")?;
    let eval = evaluate_run(&ckpt, &dataset, &eval_cfg)?;
    manifest.stage("report")?;
    for p in emit_report(&eval, out)? {
        manifest.artifact(p);
    }
    println!(
        "classifier accuracy {:.4}, clustering accuracy {:.4}",
        eval.report.classifier_accuracy, eval.report.clustering_accuracy
    );
    manifest.finish()
}

fn compare(a: &Path, b: &Path, labels: &[String], out: Option<&Path>) -> Result<()> {
    let ra = EvaluationReport::load(a).with_context(|| format!("reading {}", a.display()))?;
    let rb = EvaluationReport::load(b).with_context(|| format!("reading {}", b.display()))?;
    let cmp = Comparison::new(&ra, &rb, [labels[0].clone(), labels[1].clone()])?;
    print!("{}", cmp.to_text());
    if let Some(path) = out {
        std::fs::write(path, cmp.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            classes,
            per_class,
            seconds,
            snr_db,
            seed,
            out,
            overwrite,
        } => synth(classes, per_class, seconds, snr_db, seed, &out, overwrite),
        Command::Prepare { config, data, out } => prepare(config.as_deref(), &data, &out),
        Command::Train {
            config,
            mode,
            data,
            out,
            seed,
            resume,
        } => train(config.as_deref(), &mode, &data, &out, seed, resume),
        Command::Evaluate {
            checkpoint,
            data,
            out,
            config,
            seed,
        } => evaluate(&checkpoint, &data, &out, config.as_deref(), seed),
        Command::Compare {
            report_a,
            report_b,
            labels,
            out,
        } => compare(&report_a, &report_b, &labels, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
