//! Two-stage training (MSE, then MSE + pairwise loss) and the MSE-only
//! baseline.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{FrameSequence, MelFrame};
use crate::checkpoint::{Checkpoint, DataContext, TrainerState};
use crate::model::{AfpModel, ModelConfig, Param};
use crate::pairloss::{batch_pair_loss_with_grad, PairLossConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub baseline_epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Start stage 2 with fresh optimizer moments.
    pub reset_optimizer_between_stages: bool,
    pub seed: u64,
    pub pair_loss: PairLossConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            stage1_epochs: 6,
            stage2_epochs: 3,
            baseline_epochs: 9,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            reset_optimizer_between_stages: false,
            seed: 0,
            pair_loss: PairLossConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("adam_epsilon must be positive".into()));
        }
        self.pair_loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// MSE for `stage1_epochs`, then MSE + pairwise loss for `stage2_epochs`.
    PairLoss,
    /// MSE only for `baseline_epochs`.
    Baseline,
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMode::PairLoss => "pairloss",
            TrainingMode::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairloss" => Ok(TrainingMode::PairLoss),
            "baseline" => Ok(TrainingMode::Baseline),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochStage {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "mse+pair")]
    MsePair,
}

impl fmt::Display for EpochStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpochStage::Mse => "mse",
            EpochStage::MsePair => "mse+pair",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch counter across both stages.
    pub epoch: usize,
    pub stage: EpochStage,
    pub mse: f64,
    /// Unweighted batch pairwise loss, averaged over batches; zero in MSE
    /// epochs.
    pub pair_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,stage,mse,pair_loss,seconds\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.epoch, r.stage, r.mse, r.pair_loss, r.seconds
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Records without wall-clock time, for determinism comparisons.
    pub fn without_timing(&self) -> Vec<EpochRecord> {
        self.records
            .iter()
            .map(|r| EpochRecord {
                seconds: 0.0,
                ..r.clone()
            })
            .collect()
    }
}

/// Mean over all cells of the squared difference.
pub fn mse_loss(predicted: &MelFrame, target: &MelFrame) -> Result<f64> {
    if predicted.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    Ok(squared_error(&predicted.values, &target.values) / predicted.values.len() as f64)
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: &TrainingConfig, params: &[&Param]) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_epsilon,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.m.iter_mut().chain(self.v.iter_mut()).for_each(|x| x.fill(0.0));
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Owns a model while it trains; one epoch at a time so runs can be
/// checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: AfpModel,
    config: TrainingConfig,
    mode: TrainingMode,
    optimizer: Adam,
    log: TrainingLog,
    epochs_done: usize,
    steps: u64,
}

impl Trainer {
    pub fn new(model: AfpModel, config: TrainingConfig, mode: TrainingMode) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&config, &model.params());
        Ok(Self {
            model,
            config,
            mode,
            optimizer,
            log: TrainingLog::default(),
            epochs_done: 0,
            steps: 0,
        })
    }

    pub fn model(&self) -> &AfpModel {
        &self.model
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn mode(&self) -> TrainingMode {
        self.mode
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn total_epochs(&self) -> usize {
        match self.mode {
            TrainingMode::PairLoss => self.config.stage1_epochs + self.config.stage2_epochs,
            TrainingMode::Baseline => self.config.baseline_epochs,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.total_epochs()
    }

    /// Stage of the 0-based epoch `epoch`.
    pub fn stage_of(&self, epoch: usize) -> EpochStage {
        match self.mode {
            TrainingMode::PairLoss if epoch >= self.config.stage1_epochs => EpochStage::MsePair,
            _ => EpochStage::Mse,
        }
    }

    /// Deterministic data order of a 0-based epoch.
    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mix = self
            .config
            .seed
            .wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs the next epoch of the schedule.
    pub fn run_epoch(&mut self, sequences: &[FrameSequence]) -> Result<&EpochRecord> {
        if self.is_finished() {
            return Err(Error::InvalidInput("training schedule already complete".into()));
        }
        let bs = self.config.batch_size;
        if sequences.len() < bs {
            return Err(Error::InsufficientData(format!(
                "{} sequences, batch size {bs}",
                sequences.len()
            )));
        }
        let epoch = self.epochs_done;
        let stage = self.stage_of(epoch);
        if stage == EpochStage::MsePair
            && epoch == self.config.stage1_epochs
            && self.config.reset_optimizer_between_stages
        {
            self.optimizer.reset();
        }

        let started = Instant::now();
        let order = self.epoch_order(epoch, sequences.len());
        let pcfg = self.config.pair_loss.clone();
        let mut mse_sum = 0.0;
        let mut pair_sum = 0.0;
        let mut batches = 0usize;

        // trailing partial batch is dropped
        for chunk in order.chunks_exact(bs) {
            let batch: Vec<&FrameSequence> = chunk.iter().map(|&i| &sequences[i]).collect();
            self.model.zero_grad();
            let (out, trace) = self.model.forward_train(&batch)?;

            let cells = out.predictions[0].len() as f64;
            let scale = 2.0 / (bs as f64 * cells);
            let mut mse = 0.0;
            let d_pred: Vec<Vec<f64>> = out
                .predictions
                .iter()
                .zip(&batch)
                .map(|(p, s)| {
                    mse += squared_error(p, &s.target.values) / (bs as f64 * cells);
                    p.iter()
                        .zip(&s.target.values)
                        .map(|(a, b)| scale * (a - b))
                        .collect()
                })
                .collect();

            let mut pair_value = 0.0;
            let mut d_pooled = None;
            if stage == EpochStage::MsePair {
                let logits: Vec<Vec<f64>> = out.pooled.iter().map(|v| v.values.clone()).collect();
                let pair = batch_pair_loss_with_grad(&logits, &pcfg)?;
                pair_value = pair.loss;
                if pcfg.weight != 0.0 {
                    d_pooled = Some(
                        pair.grad
                            .into_iter()
                            .map(|g| g.into_iter().map(|x| x * pcfg.weight).collect::<Vec<_>>())
                            .collect::<Vec<_>>(),
                    );
                }
            }
            if !mse.is_finite() || !pair_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {} step {}: mse={mse} pair={pair_value}",
                    epoch + 1,
                    self.steps + 1
                )));
            }

            self.model.backward(&trace, &d_pred, d_pooled.as_deref());
            if let Some(p) = self.model.params().iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
                return Err(Error::NonFinite(format!(
                    "epoch {} step {}: gradient of {}",
                    epoch + 1,
                    self.steps + 1,
                    p.name
                )));
            }
            self.optimizer.step(self.model.params_mut());
            self.steps += 1;
            mse_sum += mse;
            pair_sum += pair_value;
            batches += 1;
        }

        self.log.records.push(EpochRecord {
            epoch: epoch + 1,
            stage,
            mse: mse_sum / batches as f64,
            pair_loss: pair_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
        self.epochs_done += 1;
        Ok(self.log.records.last().expect("just pushed"))
    }

    /// Runs the remaining schedule.
    pub fn run(&mut self, sequences: &[FrameSequence]) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(sequences)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (AfpModel, TrainingLog) {
        (self.model, self.log)
    }

    pub(crate) fn state(&self) -> TrainerState {
        TrainerState {
            config: self.config.clone(),
            mode: self.mode,
            epochs_done: self.epochs_done,
            steps: self.steps,
            adam_t: self.optimizer.t,
            log: self.log.clone(),
        }
    }

    pub fn to_checkpoint(&self, data: Option<DataContext>) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            data,
            trainer: Some((self.state(), self.optimizer.clone())),
        }
    }

    /// Writes model, data context and optimizer state.
    pub fn save(&self, path: impl AsRef<Path>, data: Option<&DataContext>) -> Result<()> {
        Checkpoint::save_parts(
            path,
            &self.model,
            data,
            Some((&self.state(), &self.optimizer)),
        )
    }

    /// Restores a trainer saved with [`Trainer::save`]. When `expected` is
    /// given, the stored model config must equal it.
    pub fn resume(
        path: impl AsRef<Path>,
        expected: Option<&ModelConfig>,
    ) -> Result<(Self, Option<DataContext>)> {
        let ckpt = Checkpoint::load(path)?;
        if let Some(cfg) = expected {
            if cfg != ckpt.model.config() {
                return Err(Error::Checkpoint(
                    "model config differs from the checkpoint".into(),
                ));
            }
        }
        let (state, optimizer) = ckpt
            .trainer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no trainer state".into()))?;
        Ok((
            Self {
                model: ckpt.model,
                config: state.config,
                mode: state.mode,
                optimizer,
                log: state.log,
                epochs_done: state.epochs_done,
                steps: state.steps,
            },
            ckpt.data,
        ))
    }
}

/// MSE-only warm-up followed by joint MSE + pairwise training.
pub fn train_pairloss(
    model: AfpModel,
    sequences: &[FrameSequence],
    config: &TrainingConfig,
) -> Result<(AfpModel, TrainingLog)> {
    let mut t = Trainer::new(model, config.clone(), TrainingMode::PairLoss)?;
    t.run(sequences)?;
    Ok(t.into_parts())
}

/// MSE only for `baseline_epochs`.
pub fn train_baseline(
    model: AfpModel,
    sequences: &[FrameSequence],
    config: &TrainingConfig,
) -> Result<(AfpModel, TrainingLog)> {
    let mut t = Trainer::new(model, config.clone(), TrainingMode::Baseline)?;
    t.run(sequences)?;
    Ok(t.into_parts())
}
