use std::sync::Arc;

use super::{FrameSequence, FrontendConfig, MelExtractor, MelFrame, WaveformClip};
use crate::{Error, Result};

/// Cuts a clip into hop-spaced frames and converts each to log-mel.
///
/// Produces `floor((len - frame) / hop) + 1` frames in start-time order.
pub fn extract_frames(clip: &WaveformClip, config: &FrontendConfig) -> Result<Vec<MelFrame>> {
    config.validate()?;
    if clip.sample_rate != config.sample_rate {
        return Err(Error::InvalidInput(format!(
            "clip sampled at {} Hz, frontend expects {} Hz",
            clip.sample_rate, config.sample_rate
        )));
    }
    let frame = config.frame_samples();
    let hop = config.hop_samples();
    let len = clip.samples.len();
    if len < frame {
        return Err(Error::ClipTooShort {
            samples: len,
            required: frame,
        });
    }
    let extractor = MelExtractor::new(config)?;
    let count = (len - frame) / hop + 1;
    (0..count)
        .map(|i| {
            let start = i * hop;
            extractor.compute(
                &clip.samples[start..start + frame],
                start as f64 / config.sample_rate as f64,
                i,
            )
        })
        .collect()
}

/// One sequence per window of four consecutive frames.
pub fn build_sequences(
    frames: &[Arc<MelFrame>],
    label: Option<&str>,
    source_id: &str,
) -> Result<Vec<FrameSequence>> {
    frames
        .windows(4)
        .map(|w| {
            FrameSequence::new(
                [w[0].clone(), w[1].clone(), w[2].clone()],
                w[3].clone(),
                label.map(str::to_owned),
                source_id,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(seconds: f64) -> WaveformClip {
        let n = (seconds * 16_000.0).round() as usize;
        let samples = (0..n).map(|i| ((i as f64) * 0.37).sin() * 0.3).collect();
        WaveformClip::new(samples, 16_000, Some("tone".into()), "c").unwrap()
    }

    #[test]
    fn frame_counts() {
        let cfg = FrontendConfig::default();
        // floor((163840 - 40960) / 10240) + 1
        assert_eq!(extract_frames(&clip(10.24), &cfg).unwrap().len(), 13);
        assert_eq!(extract_frames(&clip(2.56), &cfg).unwrap().len(), 1);
        assert!(matches!(
            extract_frames(&clip(2.0), &cfg),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn frames_are_ordered() {
        let frames = extract_frames(&clip(5.0), &FrontendConfig::default()).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.frame_index, i);
            assert!((f.start_time - i as f64 * 0.64).abs() < 1e-9);
        }
    }

    #[test]
    fn sequence_counts() {
        let mk = |n: usize| -> Vec<Arc<MelFrame>> {
            (0..n)
                .map(|i| Arc::new(MelFrame::new(vec![i as f64; 4], 2, 2, 0.0, i).unwrap()))
                .collect()
        };
        assert_eq!(build_sequences(&mk(13), None, "a").unwrap().len(), 10);
        assert_eq!(build_sequences(&mk(4), None, "a").unwrap().len(), 1);
        assert!(build_sequences(&mk(3), None, "a").unwrap().is_empty());
        let seqs = build_sequences(&mk(5), Some("dog"), "a").unwrap();
        assert_eq!(seqs[1].target.frame_index, 4);
        assert_eq!(seqs[1].label.as_deref(), Some("dog"));
    }
}
