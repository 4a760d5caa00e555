use serde::{Deserialize, Serialize};

use super::MelFrame;
use crate::{Error, Result};

const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// One scalar mean/std over every cell of every training frame.
    #[default]
    Global,
    /// Separate mean/std per mel bin.
    PerBin,
}

/// Statistics fitted on training frames and reapplied verbatim elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormalizationParams {
    pub mode: NormalizationMode,
    /// One entry for global mode, `mel_bins` entries for per-bin mode.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationParams {
    pub fn fit(frames: &[&MelFrame], mode: NormalizationMode) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::DegenerateDataset("no frames to normalize".into()))?;
        let bins = first.mel_bins;
        if frames.iter().any(|f| f.mel_bins != bins) {
            return Err(Error::Shape("frames differ in mel bin count".into()));
        }
        let groups = match mode {
            NormalizationMode::Global => 1,
            NormalizationMode::PerBin => bins,
        };
        let group_of = |i: usize| match mode {
            NormalizationMode::Global => 0,
            NormalizationMode::PerBin => i % bins,
        };

        let mut count = vec![0usize; groups];
        let mut sum = vec![0.0; groups];
        for f in frames {
            for (i, v) in f.values.iter().enumerate() {
                sum[group_of(i)] += v;
                count[group_of(i)] += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mut sq = vec![0.0; groups];
        for f in frames {
            for (i, v) in f.values.iter().enumerate() {
                let g = group_of(i);
                sq[g] += (v - mean[g]).powi(2);
            }
        }
        let std: Vec<f64> = sq
            .iter()
            .zip(&count)
            .map(|(s, &c)| (s / c as f64).sqrt())
            .collect();
        if std.iter().any(|&s| !(s >= MIN_STD)) {
            return Err(Error::DegenerateDataset(
                "feature standard deviation below 1e-12".into(),
            ));
        }
        Ok(Self { mode, mean, std })
    }

    pub fn apply(&self, frame: &MelFrame) -> Result<MelFrame> {
        if self.mode == NormalizationMode::PerBin && self.mean.len() != frame.mel_bins {
            return Err(Error::Shape(format!(
                "normalization fitted on {} bins, frame has {}",
                self.mean.len(),
                frame.mel_bins
            )));
        }
        let values = frame
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let g = match self.mode {
                    NormalizationMode::Global => 0,
                    NormalizationMode::PerBin => i % frame.mel_bins,
                };
                (v - self.mean[g]) / self.std[g]
            })
            .collect();
        MelFrame::new(
            values,
            frame.time_steps,
            frame.mel_bins,
            frame.start_time,
            frame.frame_index,
        )
    }
}

/// Fits normalization on `frames` and returns the transformed frames.
pub fn normalize_dataset(
    frames: &[MelFrame],
    mode: NormalizationMode,
) -> Result<(NormalizationParams, Vec<MelFrame>)> {
    let refs: Vec<&MelFrame> = frames.iter().collect();
    let params = NormalizationParams::fit(&refs, mode)?;
    let out = frames.iter().map(|f| params.apply(f)).collect::<Result<_>>()?;
    Ok((params, out))
}
