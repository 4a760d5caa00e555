//! Audio frontend: WAV ingestion, framing, log-mel spectrograms and
//! dataset normalization.

mod cache;
mod dataset;
mod frames;
mod mel;
mod normalize;
mod wav;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cache::{read_frame_cache, write_frame_cache, CacheEntry, FrameCache, CACHE_MAGIC};
pub use dataset::{scan_dataset, split_clips, DatasetEntry, SplitAssignment};
pub use frames::{build_sequences, extract_frames};
pub use mel::{hz_to_mel, mel_band_centers, mel_spectrogram, mel_to_hz, MelExtractor};
pub use normalize::{normalize_dataset, NormalizationMode, NormalizationParams};
pub use wav::{load_waveform, resample, write_wav};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<String>,
    pub source_id: String,
}

impl WaveformClip {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        label: Option<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One log-mel frame laid out row-major as `(time_steps, mel_bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame {
    pub values: Vec<f64>,
    pub time_steps: usize,
    pub mel_bins: usize,
    pub start_time: f64,
    pub frame_index: usize,
}

impl MelFrame {
    pub fn new(
        values: Vec<f64>,
        time_steps: usize,
        mel_bins: usize,
        start_time: f64,
        frame_index: usize,
    ) -> Result<Self> {
        if values.len() != time_steps * mel_bins {
            return Err(Error::Shape(format!(
                "frame has {} values, expected {}x{}",
                values.len(),
                time_steps,
                mel_bins
            )));
        }
        Ok(Self {
            values,
            time_steps,
            mel_bins,
            start_time,
            frame_index,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.time_steps, self.mel_bins)
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.values[t * self.mel_bins + m]
    }
}

/// Three consecutive input frames and the frame that follows them.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub inputs: [Arc<MelFrame>; 3],
    pub target: Arc<MelFrame>,
    pub label: Option<String>,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(
        inputs: [Arc<MelFrame>; 3],
        target: Arc<MelFrame>,
        label: Option<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let idx: Vec<usize> = inputs.iter().map(|f| f.frame_index).collect();
        if idx[1] != idx[0] + 1 || idx[2] != idx[1] + 1 || target.frame_index != idx[2] + 1 {
            return Err(Error::InvalidInput(format!(
                "frame indices {:?} -> {} are not consecutive",
                idx, target.frame_index
            )));
        }
        let shape = target.shape();
        if inputs.iter().any(|f| f.shape() != shape) {
            return Err(Error::Shape("sequence frames differ in shape".into()));
        }
        Ok(Self {
            inputs,
            target,
            label,
            source_id: source_id.into(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub frame_seconds: f64,
    /// Hop between frames as a fraction of the frame length.
    pub hop_fraction: f64,
    pub sample_rate: u32,
    pub stft_window: usize,
    pub stft_hop: usize,
    pub mel_bins: usize,
    pub log_floor: f64,
    pub normalization: NormalizationMode,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_seconds: 2.56,
            hop_fraction: 0.25,
            sample_rate: 16_000,
            stft_window: 1024,
            stft_hop: 512,
            mel_bins: 64,
            log_floor: 1e-10,
            normalization: NormalizationMode::Global,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_fraction > 0.0 && self.hop_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "hop_fraction must lie in (0, 1], got {}",
                self.hop_fraction
            )));
        }
        if self.stft_hop == 0 || self.stft_hop > self.stft_window {
            return Err(Error::Config("stft_hop must be in 1..=stft_window".into()));
        }
        if self.mel_bins == 0 {
            return Err(Error::Config("mel_bins must be at least 1".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if !(self.frame_seconds > 0.0) {
            return Err(Error::Config("frame_seconds must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        if self.frame_samples() < self.stft_window / 2 + 1 {
            return Err(Error::Config("frame shorter than half an STFT window".into()));
        }
        Ok(())
    }

    pub fn frame_samples(&self) -> usize {
        (self.frame_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        ((self.frame_samples() as f64 * self.hop_fraction).round() as usize).max(1)
    }

    /// STFT columns per frame: one per `stft_hop` samples of the segment.
    pub fn time_steps(&self) -> usize {
        self.frame_samples().div_ceil(self.stft_hop)
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.time_steps(), self.mel_bins)
    }
}
