//! Binary frame cache.
//!
//! `<name>.pffr` holds a 16-byte header (`b"PFFR"`, version, frame count,
//! reserved; all `u32` little-endian) followed by every frame as
//! little-endian `f32` in row-major `(time, mel)` order. A sidecar
//! `<name>.idx` text file records the frame geometry and maps contiguous
//! frame ranges to their clip:
//!
//! ```text
//! # pffr-index v1 time_steps=80 mel_bins=64
//! start,end,source_id,label
//! 0,9,dog/0001,dog
//! ```
//!
//! `end` is exclusive. An empty label means the clip is unlabelled.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::MelFrame;
use crate::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"PFFR";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub source_id: String,
    pub label: Option<String>,
    pub frames: Vec<MelFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCache {
    pub time_steps: usize,
    pub mel_bins: usize,
    pub entries: Vec<CacheEntry>,
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("idx")
}

pub fn write_frame_cache(path: impl AsRef<Path>, cache: &FrameCache) -> Result<()> {
    let path = path.as_ref();
    let cells = cache.time_steps * cache.mel_bins;
    let total: usize = cache.entries.iter().map(|e| e.frames.len()).sum();
    let n_frames = u32::try_from(total)
        .map_err(|_| Error::InvalidInput("too many frames for the cache format".into()))?;

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(CACHE_MAGIC);
    header.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    header.extend_from_slice(&n_frames.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    out.write_all(&header).map_err(|e| Error::io(path, e))?;

    let mut index = format!(
        "# pffr-index v1 time_steps={} mel_bins={}\nstart,end,source_id,label\n",
        cache.time_steps, cache.mel_bins
    );
    let mut cursor = 0usize;
    for entry in &cache.entries {
        if entry.source_id.contains(',') || entry.label.as_deref().is_some_and(|l| l.contains(',')) {
            return Err(Error::InvalidInput(format!(
                "commas are not allowed in ids or labels: {}",
                entry.source_id
            )));
        }
        for frame in &entry.frames {
            if frame.values.len() != cells {
                return Err(Error::Shape("cache frame geometry mismatch".into()));
            }
            for v in &frame.values {
                out.write_all(&(*v as f32).to_le_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        index.push_str(&format!(
            "{},{},{},{}\n",
            cursor,
            cursor + entry.frames.len(),
            entry.source_id,
            entry.label.as_deref().unwrap_or("")
        ));
        cursor += entry.frames.len();
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let idx = sidecar(path);
    fs::write(&idx, index).map_err(|e| Error::io(&idx, e))
}

pub fn read_frame_cache(
    path: impl AsRef<Path>,
    hop_seconds: f64,
) -> Result<FrameCache> {
    let path = path.as_ref();
    let idx_path = sidecar(path);
    let idx = fs::File::open(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
    let mut lines = BufReader::new(idx).lines();
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", idx_path.display()));

    let head = lines
        .next()
        .ok_or_else(|| bad("empty index"))?
        .map_err(|e| Error::io(&idx_path, e))?;
    let mut time_steps = None;
    let mut mel_bins = None;
    for tok in head.split_whitespace() {
        if let Some(v) = tok.strip_prefix("time_steps=") {
            time_steps = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("mel_bins=") {
            mel_bins = v.parse::<usize>().ok();
        }
    }
    let (time_steps, mel_bins) = time_steps
        .zip(mel_bins)
        .ok_or_else(|| bad("missing geometry in header"))?;
    lines.next(); // column names

    let mut ranges = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(&idx_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let start: usize = cols[0].parse().map_err(|_| bad("bad start"))?;
        let end: usize = cols[1].parse().map_err(|_| bad("bad end"))?;
        let label = (!cols[3].is_empty()).then(|| cols[3].to_string());
        ranges.push((start, end, cols[2].to_string(), label));
    }

    let mut data = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    if data.len() < 16 || &data[..4] != CACHE_MAGIC {
        return Err(Error::InvalidInput(format!("{}: not a PFFR file", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(data[i..i + 4].try_into().unwrap());
    if word(4) != CACHE_VERSION {
        return Err(Error::InvalidInput(format!("unsupported PFFR version {}", word(4))));
    }
    let n_frames = word(8) as usize;
    let cells = time_steps * mel_bins;
    if data.len() != 16 + n_frames * cells * 4 {
        return Err(Error::InvalidInput(format!("{}: truncated frame data", path.display())));
    }

    let frame_at = |i: usize, local: usize| -> Result<MelFrame> {
        let base = 16 + i * cells * 4;
        let values = data[base..base + cells * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        MelFrame::new(values, time_steps, mel_bins, local as f64 * hop_seconds, local)
    };
    let entries = ranges
        .into_iter()
        .map(|(start, end, source_id, label)| {
            if start > end || end > n_frames {
                return Err(bad("frame range out of bounds"));
            }
            let frames = (start..end)
                .map(|i| frame_at(i, i - start))
                .collect::<Result<_>>()?;
            Ok(CacheEntry {
                source_id,
                label,
                frames,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FrameCache {
        time_steps,
        mel_bins,
        entries,
    })
}
