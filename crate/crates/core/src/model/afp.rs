use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, BnCache, Conv2d, ConvLstm, LstmTrace, Param};
use super::linalg::{upsample2, upsample2_backward};
use super::{
    feature_distribution, pool_code, CodeTensor, FeatureDistribution, FeatureVector, ModelConfig,
    INPUT_FRAMES,
};
use crate::audio::{FrameSequence, MelFrame};
use crate::{Error, Result};

/// Activations of one batch: sample -> step -> `c x h x w` buffer.
type Seq = Vec<Vec<f64>>;
type StatePair = (Vec<f64>, Vec<f64>);

/// A ConvLSTM layer followed by ReLU and batch normalization, optionally
/// preceded by 2x nearest-neighbour upsampling.
#[derive(Debug, Clone)]
pub struct Stage {
    pub lstm: ConvLstm,
    pub bn: BatchNorm,
    upsample: bool,
    /// Emit every step (true) or only the last one.
    return_sequences: bool,
}

#[derive(Debug, Clone)]
struct StageTrace {
    /// Spatial size of the cell input (after upsampling).
    in_h: usize,
    in_w: usize,
    lstm: Vec<LstmTrace>,
    bn: Option<BnCache>,
}

impl Stage {
    /// Runs the stage on the whole batch. `train` selects batch statistics.
    fn forward(
        &self,
        inputs: &[Seq],
        h: usize,
        w: usize,
        seeds: Option<&[StatePair]>,
        train: bool,
    ) -> (Vec<Seq>, Vec<StatePair>, StageTrace) {
        let (in_h, in_w) = if self.upsample { (2 * h, 2 * w) } else { (h, w) };
        let cin = self.lstm.cin;
        let mut traces = Vec::with_capacity(inputs.len());
        let mut relu_out = Vec::new();
        let mut finals = Vec::with_capacity(inputs.len());

        for (n, seq) in inputs.iter().enumerate() {
            let upsampled: Seq;
            let xs: Vec<&[f64]> = if self.upsample {
                upsampled = seq.iter().map(|x| upsample2(x, cin, h, w)).collect();
                upsampled.iter().map(Vec::as_slice).collect()
            } else {
                seq.iter().map(Vec::as_slice).collect()
            };
            let init = seeds.map(|s| (s[n].0.as_slice(), s[n].1.as_slice()));
            let tr = self.lstm.forward(&xs, in_h, in_w, init);
            let emitted = if self.return_sequences {
                &tr.hs[..]
            } else {
                &tr.hs[tr.hs.len() - 1..]
            };
            relu_out.extend(emitted.iter().map(|h| h.iter().map(|v| v.max(0.0)).collect::<Vec<_>>()));
            finals.push((tr.hs.last().cloned().unwrap_or_default(), tr.c_last.clone()));
            traces.push(tr);
        }

        let (ys, bn) = if train {
            let (ys, cache) = self.bn.forward_train(&relu_out);
            (ys, Some(cache))
        } else {
            (self.bn.forward_infer(&relu_out), None)
        };
        let per_sample = ys.len() / inputs.len().max(1);
        let mut it = ys.into_iter();
        let outputs = (0..inputs.len())
            .map(|_| it.by_ref().take(per_sample).collect())
            .collect();
        (
            outputs,
            finals,
            StageTrace {
                in_h,
                in_w,
                lstm: traces,
                bn,
            },
        )
    }

    /// Returns input gradients (at the pre-upsampling resolution) and, for
    /// seeded stages, gradients w.r.t. the seed states.
    fn backward(
        &mut self,
        tr: &StageTrace,
        dys: &[Seq],
        d_last: Option<&[StatePair]>,
        need_dx: bool,
    ) -> (Vec<Seq>, Option<Vec<StatePair>>) {
        let cache = tr
            .bn
            .as_ref()
            .expect("backward requires a training-mode forward pass");
        let flat: Vec<Vec<f64>> = dys.iter().flatten().cloned().collect();
        let d_relu = self.bn.backward(cache, &flat);
        let emitted = d_relu.len() / dys.len();
        let cin = self.lstm.cin;
        let (h, w) = if self.upsample {
            (tr.in_h / 2, tr.in_w / 2)
        } else {
            (tr.in_h, tr.in_w)
        };

        let mut dxs = Vec::with_capacity(dys.len());
        let mut d_inits = Vec::new();
        for (n, lt) in tr.lstm.iter().enumerate() {
            let steps = lt.hs.len();
            let mut dhs = vec![vec![0.0; lt.hs[0].len()]; steps];
            for e in 0..emitted {
                let t = steps - emitted + e;
                let g = &d_relu[n * emitted + e];
                for ((d, gv), hv) in dhs[t].iter_mut().zip(g).zip(&lt.hs[t]) {
                    if *hv > 0.0 {
                        *d = *gv;
                    }
                }
            }
            let dl = d_last.map(|d| (d[n].0.as_slice(), d[n].1.as_slice()));
            let (dx, d_init) = self.lstm.backward(lt, &dhs, dl, tr.in_h, tr.in_w, need_dx);
            let dx = if self.upsample && need_dx {
                dx.iter().map(|g| upsample2_backward(g, cin, h, w)).collect()
            } else {
                dx
            };
            dxs.push(dx);
            if let Some(di) = d_init {
                d_inits.push(di);
            }
        }
        let d_inits = (!d_inits.is_empty()).then_some(d_inits);
        (dxs, d_inits)
    }

    fn params(&self) -> [&Param; 5] {
        [&self.lstm.wx, &self.lstm.wh, &self.lstm.bias, &self.bn.gamma, &self.bn.beta]
    }

    fn params_mut(&mut self) -> [&mut Param; 5] {
        [
            &mut self.lstm.wx,
            &mut self.lstm.wh,
            &mut self.lstm.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
        ]
    }
}

/// Everything the forward pass produced for one batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Predicted next frames, each `time x mel` row-major.
    pub predictions: Vec<Vec<f64>>,
    /// Bottleneck activations, channel-major `K x time' x freq'`.
    pub codes: Vec<Vec<f64>>,
    /// Per-channel means of the code (pre-softmax features).
    pub pooled: Vec<FeatureVector>,
    pub distributions: Vec<FeatureDistribution>,
}

/// Intermediate values needed by [`AfpModel::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    enc: Vec<StageTrace>,
    dec: Vec<StageTrace>,
    final_cols: Vec<Vec<f64>>,
    batch: usize,
}

/// The audio frame predictor.
///
/// Three input frames pass through strided ConvLSTM encoder stages; the
/// last stage's final-step output is the code. The code is (a) averaged
/// per channel and soft-maxed into the feature distribution and (b)
/// decoded by mirrored ConvLSTM stages with 2x upsampling and a linear
/// 3x3 output convolution into the predicted next frame.
#[derive(Debug, Clone)]
pub struct AfpModel {
    config: ModelConfig,
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
    output: Conv2d,
}

impl AfpModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel;
        let enc_ch = config.encoder_channels();
        let bn = |name: &str, c: usize| BatchNorm::new(name, c, config.bn_momentum, config.bn_eps);

        let mut encoder = Vec::with_capacity(enc_ch.len());
        let mut cin = 1;
        for (i, &c) in enc_ch.iter().enumerate() {
            let name = format!("enc{i}");
            encoder.push(Stage {
                lstm: ConvLstm::new(&name, cin, c, k, 2, config.forget_bias, &mut rng),
                bn: bn(&format!("{name}.bn"), c),
                upsample: false,
                return_sequences: i + 1 < enc_ch.len(),
            });
            cin = c;
        }

        let dec_ch: Vec<usize> = enc_ch.iter().rev().copied().collect();
        let mut decoder = Vec::with_capacity(dec_ch.len());
        for (i, &c) in dec_ch.iter().enumerate() {
            let name = format!("dec{i}");
            decoder.push(Stage {
                lstm: ConvLstm::new(&name, cin, c, k, 1, config.forget_bias, &mut rng),
                bn: bn(&format!("{name}.bn"), c),
                upsample: i > 0,
                return_sequences: true,
            });
            cin = c;
        }
        let output = Conv2d::new("out", cin, 1, config.final_kernel, &mut rng);
        Ok(Self {
            config,
            encoder,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.encoder.iter().flat_map(|s| s.params()).collect();
        v.extend(self.decoder.iter().flat_map(|s| s.params()));
        v.push(&self.output.weight);
        v.push(&self.output.bias);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.encoder.iter_mut().flat_map(|s| s.params_mut()).collect();
        v.extend(self.decoder.iter_mut().flat_map(|s| s.params_mut()));
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    /// Parameters of the encoder stages only.
    pub fn encoder_params(&self) -> Vec<&Param> {
        self.encoder.iter().flat_map(|s| s.params()).collect()
    }

    /// Batch-norm running statistics, in a fixed order: for every stage
    /// (encoder first) its running mean then running variance.
    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|s| [&s.bn.running_mean, &s.bn.running_var])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|s| [&mut s.bn.running_mean, &mut s.bn.running_var])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// FNV-1a over the bit patterns of every encoder parameter.
    pub fn encoder_fingerprint(&self) -> u64 {
        fingerprint(self.encoder_params().into_iter())
    }

    fn check_inputs(&self, inputs: &[&MelFrame]) -> Result<()> {
        if inputs.len() != INPUT_FRAMES {
            return Err(Error::Shape(format!(
                "expected {INPUT_FRAMES} input frames, got {}",
                inputs.len()
            )));
        }
        let want = (self.config.frame_time, self.config.frame_mel);
        for f in inputs {
            if f.shape() != want {
                return Err(Error::Shape(format!(
                    "frame shape {:?}, model expects {want:?}",
                    f.shape()
                )));
            }
        }
        Ok(())
    }

    fn gather(&self, batch: &[&FrameSequence]) -> Result<Vec<Seq>> {
        batch
            .iter()
            .map(|s| {
                let refs: Vec<&MelFrame> = s.inputs.iter().map(|f| f.as_ref()).collect();
                self.check_inputs(&refs)?;
                Ok(refs.iter().map(|f| f.values.clone()).collect())
            })
            .collect()
    }

    fn forward_impl(&self, inputs: &[Seq], train: bool) -> (BatchOutput, Trace) {
        let cfg = &self.config;
        let (mut h, mut w) = (cfg.frame_time, cfg.frame_mel);
        let mut acts: Vec<Seq> = inputs.to_vec();
        let mut enc_traces = Vec::with_capacity(self.encoder.len());
        let mut enc_finals = Vec::new();
        for stage in &self.encoder {
            let (out, finals, tr) = stage.forward(&acts, h, w, None, train);
            (h, w) = stage.lstm.out_dims(h, w);
            acts = out;
            enc_finals = finals;
            enc_traces.push(tr);
        }
        let codes: Vec<Vec<f64>> = acts.iter().map(|s| s[0].clone()).collect();
        let k = cfg.code_channels;
        let (pooled, distributions): (Vec<_>, Vec<_>) = codes
            .iter()
            .map(|c| {
                let code = CodeTensor::from_channel_major(c.clone(), k, h, w);
                let v = pool_code(&code);
                let d = feature_distribution(&v).expect("finite code");
                (v, d)
            })
            .unzip();

        let seeds = cfg.decoder_seeded.then_some(enc_finals.as_slice());
        let mut dec_traces = Vec::with_capacity(self.decoder.len());
        for (i, stage) in self.decoder.iter().enumerate() {
            let (out, _, tr) = stage.forward(&acts, h, w, if i == 0 { seeds } else { None }, train);
            (h, w) = (tr.in_h, tr.in_w);
            acts = out;
            dec_traces.push(tr);
        }

        let cin = self.output.cin;
        let (oh, ow) = (2 * h, 2 * w);
        let mut predictions = Vec::with_capacity(acts.len());
        let mut final_cols = Vec::with_capacity(acts.len());
        for s in &acts {
            let up = upsample2(&s[0], cin, h, w);
            let (pred, cols) = self.output.forward(&up, oh, ow);
            predictions.push(pred);
            if train {
                final_cols.push(cols);
            }
        }
        (
            BatchOutput {
                predictions,
                codes,
                pooled,
                distributions,
            },
            Trace {
                enc: enc_traces,
                dec: dec_traces,
                final_cols,
                batch: inputs.len(),
            },
        )
    }

    /// Training-mode forward pass: batch statistics for normalization and
    /// running averages updated.
    pub fn forward_train(&mut self, batch: &[&FrameSequence]) -> Result<(BatchOutput, Trace)> {
        if batch.len() < 2 {
            return Err(Error::InvalidInput(
                "training batches need at least two sequences".into(),
            ));
        }
        let inputs = self.gather(batch)?;
        let (out, trace) = self.forward_impl(&inputs, true);
        for (stage, tr) in self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .zip(trace.enc.iter().chain(&trace.dec))
        {
            if let Some(cache) = &tr.bn {
                stage.bn.update_running(cache);
            }
        }
        Ok((out, trace))
    }

    /// Training-mode forward pass on raw `(3, time, mel)` inputs without
    /// touching running statistics. Used by gradient checks.
    pub fn forward_train_raw(&self, inputs: &[Vec<Vec<f64>>]) -> Result<(BatchOutput, Trace)> {
        let cells = self.config.frame_time * self.config.frame_mel;
        if inputs.len() < 2
            || inputs
                .iter()
                .any(|s| s.len() != INPUT_FRAMES || s.iter().any(|f| f.len() != cells))
        {
            return Err(Error::Shape("raw batch must be N>=2 x 3 x frame".into()));
        }
        Ok(self.forward_impl(inputs, true))
    }

    /// Accumulates parameter gradients for a training-mode pass.
    ///
    /// `d_pred[n]` is the loss gradient w.r.t. prediction `n`; `d_pooled`,
    /// when present, the gradient w.r.t. the pre-softmax feature vectors.
    pub fn backward(&mut self, trace: &Trace, d_pred: &[Vec<f64>], d_pooled: Option<&[Vec<f64>]>) {
        assert_eq!(d_pred.len(), trace.batch);
        let cfg = self.config.clone();
        let (ch, cw) = cfg.code_dims();
        let p_code = ch * cw;

        // output conv and final upsampling
        let last = trace.dec.last().expect("decoder has stages");
        let (h, w) = (last.in_h, last.in_w);
        let cin = self.output.cin;
        let mut grads: Vec<Seq> = d_pred
            .iter()
            .zip(&trace.final_cols)
            .map(|(dp, cols)| {
                let dx = self.output.backward(dp, cols, 2 * h, 2 * w);
                vec![upsample2_backward(&dx, cin, h, w)]
            })
            .collect();

        let mut dec_seed_grads = None;
        for (i, stage) in self.decoder.iter_mut().enumerate().rev() {
            let (dx, d_init) = stage.backward(&trace.dec[i], &grads, None, true);
            grads = dx;
            if i == 0 {
                dec_seed_grads = d_init;
            }
        }

        if let Some(dp) = d_pooled {
            for (g, dv) in grads.iter_mut().zip(dp) {
                for (c, d) in dv.iter().enumerate() {
                    let share = d / p_code as f64;
                    g[0][c * p_code..(c + 1) * p_code]
                        .iter_mut()
                        .for_each(|v| *v += share);
                }
            }
        }

        let n_enc = self.encoder.len();
        for (i, stage) in self.encoder.iter_mut().enumerate().rev() {
            let d_last = if i + 1 == n_enc {
                dec_seed_grads.as_deref()
            } else {
                None
            };
            let (dx, _) = stage.backward(&trace.enc[i], &grads, d_last, i > 0);
            grads = dx;
        }
    }

    fn infer_batch(&self, batch: &[&FrameSequence]) -> Result<BatchOutput> {
        let inputs = self.gather(batch)?;
        Ok(self.forward_impl(&inputs, false).0)
    }

    fn infer_frames(&self, inputs: &[&MelFrame]) -> Result<BatchOutput> {
        self.check_inputs(inputs)?;
        let seq: Seq = inputs.iter().map(|f| f.values.clone()).collect();
        Ok(self.forward_impl(&[seq], false).0)
    }

    /// Inference-mode encoding of three consecutive frames.
    pub fn encode(&self, inputs: &[&MelFrame]) -> Result<CodeTensor> {
        let out = self.infer_frames(inputs)?;
        let (h, w) = self.config.code_dims();
        Ok(CodeTensor::from_channel_major(
            out.codes.into_iter().next().unwrap_or_default(),
            self.config.code_channels,
            h,
            w,
        ))
    }

    /// Inference-mode prediction of the frame following `inputs`.
    pub fn predict_next_frame(&self, inputs: &[&MelFrame]) -> Result<MelFrame> {
        let out = self.infer_frames(inputs)?;
        let last = inputs[INPUT_FRAMES - 1];
        MelFrame::new(
            out.predictions.into_iter().next().unwrap_or_default(),
            self.config.frame_time,
            self.config.frame_mel,
            last.start_time,
            last.frame_index + 1,
        )
    }

    /// Both heads from one shared inference-mode encoder pass.
    pub fn forward(&self, sequence: &FrameSequence) -> Result<(MelFrame, FeatureDistribution)> {
        let mut out = self.infer_batch(&[sequence])?;
        let t = &sequence.target;
        let pred = MelFrame::new(
            out.predictions.swap_remove(0),
            self.config.frame_time,
            self.config.frame_mel,
            t.start_time,
            t.frame_index,
        )?;
        Ok((pred, out.distributions.swap_remove(0)))
    }

    /// Inference-mode features for many sequences, processed in chunks.
    pub fn features(&self, sequences: &[&FrameSequence], chunk: usize) -> Result<Vec<(FeatureVector, FeatureDistribution)>> {
        let mut rows = Vec::with_capacity(sequences.len());
        for part in sequences.chunks(chunk.max(1)) {
            let out = self.infer_batch(part)?;
            rows.extend(out.pooled.into_iter().zip(out.distributions));
        }
        Ok(rows)
    }
}

pub(crate) fn fingerprint<'a>(params: impl Iterator<Item = &'a Param>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for v in &p.value {
            for b in v.to_bits().to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    hash
}

impl AfpModel {
    fn weights_meta(&self) -> serde_json::Value {
        let names: Vec<&str> = self.params().iter().map(|p| p.name.as_str()).collect();
        serde_json::json!({
            "kind": "afp-weights",
            "model": self.config,
            "params": names,
        })
    }

    /// Parameters followed by batch-norm running statistics.
    pub(crate) fn state_tensors(&self) -> Vec<&[f64]> {
        self.params()
            .into_iter()
            .map(|p| p.value.as_slice())
            .chain(self.buffers().into_iter().map(Vec::as_slice))
            .collect()
    }

    pub(crate) fn state_len(&self) -> usize {
        self.params().len() + self.buffers().len()
    }

    /// Restores parameters and running statistics from [`state_tensors`]
    /// order. Shapes must match exactly.
    ///
    /// [`state_tensors`]: AfpModel::state_tensors
    pub(crate) fn restore_state(&mut self, tensors: &[Vec<f64>]) -> Result<()> {
        if tensors.len() != self.state_len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.state_len(),
                tensors.len()
            )));
        }
        let n_params = self.params().len();
        let slots = self
            .params_mut()
            .into_iter()
            .map(|p| &mut p.value)
            .collect::<Vec<_>>();
        for (slot, t) in slots.into_iter().zip(&tensors[..n_params]) {
            if slot.len() != t.len() {
                return Err(Error::Checkpoint("tensor size mismatch".into()));
            }
            slot.copy_from_slice(t);
        }
        for (slot, t) in self.buffers_mut().into_iter().zip(&tensors[n_params..]) {
            if slot.len() != t.len() {
                return Err(Error::Checkpoint("buffer size mismatch".into()));
            }
            slot.copy_from_slice(t);
        }
        Ok(())
    }

    /// Writes parameters, running statistics and the model config.
    pub fn save_weights(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        super::write_container(path, &self.weights_meta(), &self.state_tensors())
    }

    /// Loads weights saved by [`AfpModel::save_weights`] into a model with
    /// an identical config.
    pub fn load_weights(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let (meta, tensors) = super::read_container(path)?;
        let stored: ModelConfig = serde_json::from_value(meta["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        if stored != self.config {
            return Err(Error::Checkpoint(format!(
                "config mismatch: file has K={} hidden={:?} frame={}x{}, model has K={} hidden={:?} frame={}x{}",
                stored.code_channels,
                stored.hidden_channels,
                stored.frame_time,
                stored.frame_mel,
                self.config.code_channels,
                self.config.hidden_channels,
                self.config.frame_time,
                self.config.frame_mel
            )));
        }
        self.restore_state(&tensors)
    }
}
