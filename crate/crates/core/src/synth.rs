//! Deterministic synthetic acoustic-event corpus.
//!
//! Each class is an archetype with a distinct spectro-temporal signature;
//! clips draw their fundamental, rates and gain from class-specific bands
//! and get white noise at a fixed SNR.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, WaveformClip};
use crate::{Error, Result};

/// Class names in generation order; the first `num_classes` are used.
pub const ARCHETYPES: [&str; 8] = [
    "tone",
    "chirp",
    "noise_burst",
    "clicks",
    "fm_tone",
    "pluck",
    "rumble",
    "down_chirp",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    pub noise_snr_db: f64,
    pub sample_rate: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            clips_per_class: 40,
            clip_seconds: 7.68,
            seed: 0,
            noise_snr_db: 20.0,
            sample_rate: 16_000,
        }
    }
}

impl SynthSpec {
    /// All eight archetypes.
    pub fn eight_class() -> Self {
        Self {
            num_classes: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > ARCHETYPES.len() {
            return Err(Error::Config(format!(
                "num_classes must be in 1..={}",
                ARCHETYPES.len()
            )));
        }
        if self.clips_per_class == 0 {
            return Err(Error::Config("clips_per_class must be positive".into()));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if self.sample_rate < 8000 {
            return Err(Error::Config("sample_rate must be at least 8000".into()));
        }
        if !self.noise_snr_db.is_finite() {
            return Err(Error::Config("noise_snr_db must be finite".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> &[&'static str] {
        &ARCHETYPES[..self.num_classes.min(ARCHETYPES.len())]
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one clip; depends only on (seed, class, index).
pub fn clip_seed(seed: u64, class: usize, index: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ class as u64) ^ index as u64)
}

/// Clips ordered by class, then index. Source ids are `<class>/<class>_<nnn>`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<WaveformClip>> {
    spec.validate()?;
    let mut clips = Vec::with_capacity(spec.num_classes * spec.clips_per_class);
    for (c, name) in spec.class_names().iter().enumerate() {
        for i in 0..spec.clips_per_class {
            let samples = generate_clip(spec, c, clip_seed(spec.seed, c, i));
            clips.push(WaveformClip::new(
                samples,
                spec.sample_rate,
                Some(name.to_string()),
                format!("{name}/{name}_{i:03}"),
            )?);
        }
    }
    Ok(clips)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// One clip of archetype `class`, peak-limited to [-1, 1].
pub fn generate_clip(spec: &SynthSpec, class: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = spec.sample_rate as f64;
    let n = (spec.clip_seconds * sr).round() as usize;
    let t = |i: usize| i as f64 / sr;
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut x = vec![0.0; n];

    match ARCHETYPES[class] {
        "tone" => {
            // steady multi-tone with slow tremolo
            let f0 = rng.gen_range(300.0..900.0);
            let amps = [1.0, rng.gen_range(0.3..0.7), rng.gen_range(0.1..0.4)];
            let trem = rng.gen_range(0.2..1.0);
            let phase: f64 = rng.gen_range(0.0..TAU);
            for (i, v) in x.iter_mut().enumerate() {
                let s: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(h, a)| a * (TAU * f0 * (h + 1) as f64 * t(i) + phase * h as f64).sin())
                    .sum();
                *v = s * (1.0 + 0.2 * (TAU * trem * t(i)).sin());
            }
        }
        "chirp" | "down_chirp" => {
            // repeated linear sweeps
            let (lo, hi) = (rng.gen_range(200.0..600.0), rng.gen_range(2500.0..4000.0));
            let (f_a, f_b) = if ARCHETYPES[class] == "chirp" { (lo, hi) } else { (hi, lo) };
            let period = rng.gen_range(0.8..1.6);
            let offset = rng.gen_range(0.0..period);
            let rate = (f_b - f_a) / period;
            for (i, v) in x.iter_mut().enumerate() {
                let tau = (t(i) + offset) % period;
                let env = (tau / 0.02).min(1.0) * ((period - tau) / 0.02).min(1.0);
                *v = env * (TAU * (f_a * tau + 0.5 * rate * tau * tau)).sin();
            }
        }
        "noise_burst" => {
            // amplitude-modulated, one-pole coloured noise
            let rate = rng.gen_range(1.5..5.0);
            let alpha = rng.gen_range(0.3..0.8);
            let phase = rng.gen_range(0.0..TAU);
            let mut state = 0.0;
            for (i, v) in x.iter_mut().enumerate() {
                state = alpha * state + (1.0 - alpha) * gauss(&mut rng);
                let env = (0.5 + 0.5 * (TAU * rate * t(i) + phase).sin()).powi(2);
                *v = env * state;
            }
        }
        "clicks" => {
            // periodic decaying resonant clicks
            let rate = rng.gen_range(4.0..12.0);
            let ring = rng.gen_range(1500.0..3500.0);
            let decay = rng.gen_range(0.003..0.008);
            let offset = rng.gen_range(0.0..1.0 / rate);
            for (i, v) in x.iter_mut().enumerate() {
                let tau = (t(i) + offset) % (1.0 / rate);
                *v = (-tau / decay).exp() * (TAU * ring * tau).sin();
            }
        }
        "fm_tone" => {
            let carrier = rng.gen_range(1000.0..2000.0);
            let depth = rng.gen_range(100.0..300.0);
            let vib = rng.gen_range(3.0..7.0);
            let mut phase = 0.0;
            for (i, v) in x.iter_mut().enumerate() {
                let f = carrier + depth * (TAU * vib * t(i)).sin();
                phase += TAU * f / sr;
                *v = phase.sin();
            }
        }
        "pluck" => {
            // retriggered harmonic tones with exponential decay
            let f0 = rng.gen_range(150.0..400.0);
            let period = rng.gen_range(0.4..0.9);
            let decay = rng.gen_range(0.08..0.2);
            let offset = rng.gen_range(0.0..period);
            for (i, v) in x.iter_mut().enumerate() {
                let tau = (t(i) + offset) % period;
                let s: f64 = (1..=5)
                    .map(|h| (TAU * f0 * h as f64 * tau).sin() / h as f64 * (-tau * h as f64 / decay).exp())
                    .sum();
                *v = s;
            }
        }
        "rumble" => {
            // low-passed noise with a mains-like hum
            let alpha = rng.gen_range(0.95..0.985);
            let hum = rng.gen_range(50.0..120.0);
            let mut state = 0.0;
            for (i, v) in x.iter_mut().enumerate() {
                state = alpha * state + (1.0 - alpha) * gauss(&mut rng);
                *v = 8.0 * state + 0.3 * (TAU * hum * t(i)).sin();
            }
        }
        other => unreachable!("archetype {other}"),
    }

    let gain = 0.5 * 10f64.powf(rng.gen_range(-6.0..0.0) / 20.0);
    let peak = x.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
    x.iter_mut().for_each(|v| *v *= gain / peak);
    let noise_rms = rms(&x) / 10f64.powf(spec.noise_snr_db / 20.0);
    for v in &mut x {
        *v = (*v + noise_rms * gauss(&mut rng)).clamp(-1.0, 1.0);
    }
    x
}

/// Writes `<root>/<class>/<id>.wav` for every clip. Existing class
/// directories are an error unless `overwrite`, in which case they are
/// replaced.
pub fn export_corpus(clips: &[WaveformClip], root: impl AsRef<Path>, overwrite: bool) -> Result<usize> {
    let root = root.as_ref();
    let mut classes: Vec<&str> = clips.iter().filter_map(|c| c.label.as_deref()).collect();
    classes.sort_unstable();
    classes.dedup();
    for class in &classes {
        let dir = root.join(class);
        if dir.exists() {
            if !overwrite {
                return Err(Error::AlreadyExists(dir));
            }
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for clip in clips {
        let class = clip
            .label
            .as_deref()
            .ok_or_else(|| Error::InvalidInput(format!("{} has no label", clip.source_id)))?;
        let stem = clip.source_id.rsplit('/').next().unwrap_or(&clip.source_id);
        write_wav(clip, root.join(class).join(format!("{stem}.wav")))?;
    }
    Ok(clips.len())
}
