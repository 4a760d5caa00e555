use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{FrontendConfig, WaveformClip};
use crate::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the output instant.
const SINC_HALF_WIDTH: f64 = 16.0;
const CUTOFF_ROLLOFF: f64 = 0.95;

/// Reads a PCM or float WAV file, downmixes to mono and resamples to
/// `config.sample_rate`.
pub fn load_waveform(path: impl AsRef<Path>, config: &FrontendConfig) -> Result<WaveformClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = WavReader::new(std::io::BufReader::new(file))
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported encoding {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    };

    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let mean = frame.iter().sum::<f64>() / channels as f64;
            mean.clamp(-1.0, 1.0)
        })
        .collect();
    if mono.is_empty() {
        return Err(Error::ZeroLength);
    }
    if mono.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }

    let samples = resample(&mono, spec.sample_rate, config.sample_rate);
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    WaveformClip::new(samples, config.sample_rate, None, source_id)
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The output has `round(len * to / from)` samples.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    // cutoff relative to the input Nyquist frequency
    let cutoff = ratio.min(1.0) * CUTOFF_ROLLOFF;
    let reach = SINC_HALF_WIDTH / cutoff;
    let n = samples.len() as isize;

    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - reach).ceil() as isize).max(0);
            let hi = ((t + reach).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                let x = t - i as f64;
                let window = 0.5 * (1.0 + (PI * x / reach).cos());
                acc += samples[i as usize] * cutoff * sinc(cutoff * x) * window;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Writes a clip as 16-bit mono PCM.
pub fn write_wav(clip: &WaveformClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Wav(format!("{}: {e}", path.display()));
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, bits: u16, frames: usize) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for i in 0..frames {
            for c in 0..channels {
                let v = ((i as f64 * 0.01).sin() * 0.5 * (1 << (bits - 1)) as f64) as i32;
                w.write_sample(if c == 0 { v } else { -v }).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn mono_16k_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 16_000, 1, 16, 64_000);
        let clip = load_waveform(&p, &FrontendConfig::default()).unwrap();
        assert_eq!(clip.samples.len(), 64_000);
        assert_eq!(clip.sample_rate, 16_000);
        assert!(clip.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn resamples_32k_to_16k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_raw(&p, 32_000, 1, 16, 4 * 32_000);
        let clip = load_waveform(&p, &FrontendConfig::default()).unwrap();
        // duration x target rate
        assert_eq!(clip.samples.len(), 4 * 16_000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        // channels are exact negatives, so the downmix is silence
        write_raw(&p, 16_000, 2, 16, 1000);
        let clip = load_waveform(&p, &FrontendConfig::default()).unwrap();
        assert_eq!(clip.samples.len(), 1000);
        assert!(clip.samples.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn reads_8_and_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [8u16, 24] {
            let p = dir.path().join(format!("d{bits}.wav"));
            write_raw(&p, 16_000, 1, bits, 500);
            let clip = load_waveform(&p, &FrontendConfig::default()).unwrap();
            assert_eq!(clip.samples.len(), 500);
            let peak = clip.samples.iter().fold(0.0f64, |a, s| a.max(s.abs()));
            assert!((peak - 0.5).abs() < 0.02, "bits {bits} peak {peak}");
        }
    }

    #[test]
    fn empty_wav_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_raw(&p, 16_000, 1, 16, 0);
        let err = load_waveform(&p, &FrontendConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "zero-length audio");
    }

    #[test]
    fn missing_and_garbage_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_waveform(dir.path().join("nope.wav"), &FrontendConfig::default()).is_err());
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"definitely not a riff file").unwrap();
        assert!(matches!(
            load_waveform(&p, &FrontendConfig::default()),
            Err(Error::Wav(_))
        ));
    }

    #[test]
    fn resampling_preserves_low_tone() {
        let from = 32_000;
        let x: Vec<f64> = (0..from)
            .map(|i| (2.0 * PI * 440.0 * i as f64 / from as f64).sin() * 0.5)
            .collect();
        let y = resample(&x, from, 16_000);
        assert_eq!(y.len(), 16_000);
        // compare against the analytic tone away from the edges
        for (j, v) in y.iter().enumerate().skip(200).take(15_000) {
            let expect = (2.0 * PI * 440.0 * j as f64 / 16_000.0).sin() * 0.5;
            assert!((v - expect).abs() < 5e-3, "sample {j}: {v} vs {expect}");
        }
    }

    #[test]
    fn write_then_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let samples: Vec<f64> = (0..1600).map(|i| ((i as f64) * 0.05).sin() * 0.8).collect();
        let clip = WaveformClip::new(samples.clone(), 16_000, None, "rt").unwrap();
        write_wav(&clip, &p).unwrap();
        let back = load_waveform(&p, &FrontendConfig::default()).unwrap();
        assert_eq!(back.samples.len(), samples.len());
        for (a, b) in back.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 16_000.0);
        }
    }
}
