use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FrontendConfig, MelFrame};
use crate::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Band edges in Hz: `mel_bins + 2` points evenly spaced on the mel axis
/// between 0 Hz and Nyquist.
fn band_edges(config: &FrontendConfig) -> Vec<f64> {
    let top = hz_to_mel(config.sample_rate as f64 / 2.0);
    let n = config.mel_bins + 2;
    (0..n)
        .map(|i| mel_to_hz(top * i as f64 / (n - 1) as f64))
        .collect()
}

/// Center frequency of every mel band, in Hz.
pub fn mel_band_centers(config: &FrontendConfig) -> Vec<f64> {
    let edges = band_edges(config);
    edges[1..edges.len() - 1].to_vec()
}

/// Reusable STFT + mel filterbank state for one frontend configuration.
pub struct MelExtractor {
    config: FrontendConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// `mel_bins` rows of `(first_bin, weights)`.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelExtractor {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        config.validate()?;
        let n_fft = config.stft_window;
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        // periodic Hann
        let window = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();

        let edges = band_edges(config);
        let n_freqs = n_fft / 2 + 1;
        let bin_hz = config.sample_rate as f64 / n_fft as f64;
        let filters = (0..config.mel_bins)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_freqs)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0);
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => (first, weights.into_iter().map(|(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();

        Ok(Self {
            config: config.clone(),
            fft,
            window,
            filters,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    /// Log-mel spectrogram of one frame-length segment.
    ///
    /// The segment is reflect-padded by half a window on both sides and one
    /// STFT column is taken every `stft_hop` samples, giving
    /// `ceil(frame_samples / stft_hop)` time steps.
    pub fn compute(&self, segment: &[f64], start_time: f64, frame_index: usize) -> Result<MelFrame> {
        let cfg = &self.config;
        let frame_samples = cfg.frame_samples();
        if segment.len() != frame_samples {
            return Err(Error::Shape(format!(
                "segment has {} samples, expected {frame_samples}",
                segment.len()
            )));
        }
        let n_fft = cfg.stft_window;
        let pad = n_fft / 2;
        let padded = reflect_pad(segment, pad);
        let steps = cfg.time_steps();
        let mut values = Vec::with_capacity(steps * cfg.mel_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; n_fft / 2 + 1];

        for t in 0..steps {
            let start = t * cfg.stft_hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (first, weights) in &self.filters {
                let energy: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                values.push(energy.max(cfg.log_floor).ln());
            }
        }
        MelFrame::new(values, steps, cfg.mel_bins, start_time, frame_index)
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let reflect = |i: isize| -> f64 {
        let mut j = i;
        // a single reflection suffices when pad < len; loop covers the rest
        while j < 0 || j >= n {
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
        }
        x[j as usize]
    };
    (-(pad as isize)..n + pad as isize).map(reflect).collect()
}

/// Convenience wrapper that builds a [`MelExtractor`] for a single call.
pub fn mel_spectrogram(segment: &[f64], config: &FrontendConfig) -> Result<MelFrame> {
    MelExtractor::new(config)?.compute(segment, 0.0, 0)
}
