//! The audio frame predictor and its feature head.

mod afp;
mod container;
mod layers;
mod linalg;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use afp::{AfpModel, BatchOutput, Stage, Trace};
pub use container::{read_container, write_container, CONTAINER_MAGIC};
pub use layers::{BatchNorm, Conv2d, ConvLstm, Param};

/// Consecutive frames consumed per prediction.
pub const INPUT_FRAMES: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels of the code, `K`.
    pub code_channels: usize,
    /// Channels of the encoder stages before the code stage. Every encoder
    /// stage halves both spatial axes; the decoder mirrors them.
    pub hidden_channels: Vec<usize>,
    pub frame_time: usize,
    pub frame_mel: usize,
    /// ConvLSTM kernel size (square, odd).
    pub kernel: usize,
    /// Kernel of the linear output convolution (square, odd).
    pub final_kernel: usize,
    /// Seed the first decoder ConvLSTM with the encoder's final `(h, c)`.
    /// When false the decoder starts from a zero state.
    pub decoder_seeded: bool,
    pub forget_bias: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            code_channels: 128,
            hidden_channels: vec![32, 64],
            frame_time: 80,
            frame_mel: 64,
            kernel: 3,
            final_kernel: 3,
            decoder_seeded: true,
            forget_bias: 1.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// One encoder stage, `K = 8`, 8x8 frames. Small enough for
    /// finite-difference checks over every parameter.
    pub fn toy() -> Self {
        Self {
            code_channels: 8,
            hidden_channels: Vec::new(),
            frame_time: 8,
            frame_mel: 8,
            ..Self::default()
        }
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        let mut c = self.hidden_channels.clone();
        c.push(self.code_channels);
        c
    }

    pub fn stages(&self) -> usize {
        self.hidden_channels.len() + 1
    }

    /// `(time', freq')` of the code.
    pub fn code_dims(&self) -> (usize, usize) {
        let f = 1 << self.stages();
        (self.frame_time / f, self.frame_mel / f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_channels < 2 {
            return Err(Error::Config("code_channels must be at least 2".into()));
        }
        if self.hidden_channels.contains(&0) {
            return Err(Error::Config("hidden channel counts must be positive".into()));
        }
        let f = 1usize << self.stages();
        if self.frame_time == 0
            || self.frame_mel == 0
            || self.frame_time % f != 0
            || self.frame_mel % f != 0
        {
            return Err(Error::Config(format!(
                "frame {}x{} is not divisible by the total downsampling {f}",
                self.frame_time, self.frame_mel
            )));
        }
        for (name, k) in [("kernel", self.kernel), ("final_kernel", self.final_kernel)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return Err(Error::Config("invalid batch-norm settings".into()));
        }
        Ok(())
    }
}

/// Bottleneck activations, reported as `(time', freq', K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeTensor {
    /// Channel-major storage: `values[(k * time + t) * freq + f]`.
    values: Vec<f64>,
    channels: usize,
    time: usize,
    freq: usize,
}

impl CodeTensor {
    pub fn from_channel_major(values: Vec<f64>, channels: usize, time: usize, freq: usize) -> Self {
        assert_eq!(values.len(), channels * time * freq, "code buffer size");
        Self {
            values,
            channels,
            time,
            freq,
        }
    }

    /// Builds a code from a `(time, freq, channel)` accessor.
    pub fn from_fn(time: usize, freq: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(time * freq * channels);
        for k in 0..channels {
            for t in 0..time {
                for q in 0..freq {
                    values.push(f(t, q, k));
                }
            }
        }
        Self::from_channel_major(values, channels, time, freq)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.time, self.freq, self.channels)
    }

    pub fn get(&self, t: usize, f: usize, k: usize) -> f64 {
        self.values[(k * self.time + t) * self.freq + f]
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let p = self.time * self.freq;
        &self.values[k * p..(k + 1) * p]
    }
}

/// Per-channel means of a code.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Softmax of a [`FeatureVector`]: strictly positive, sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    probs: Vec<f64>,
}

impl FeatureDistribution {
    /// Validates positivity and normalization (within 1e-6).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidInput("distribution entries must be positive".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("distribution sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Mean over the `(time', freq')` grid of every channel.
pub fn pool_code(code: &CodeTensor) -> FeatureVector {
    let p = (code.time * code.freq) as f64;
    FeatureVector {
        values: (0..code.channels)
            .map(|k| code.channel(k).iter().sum::<f64>() / p)
            .collect(),
    }
}

/// Max-shifted softmax.
pub fn feature_distribution(vec: &FeatureVector) -> Result<FeatureDistribution> {
    if vec.values.is_empty() {
        return Err(Error::InvalidInput("empty feature vector".into()));
    }
    if vec.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    Ok(FeatureDistribution {
        probs: softmax(&vec.values),
    })
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests;
