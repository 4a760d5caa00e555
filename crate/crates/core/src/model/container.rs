//! Binary checkpoint container.
//!
//! Layout (little-endian): `b"PFCK"`, `u32` version, `u64` metadata length,
//! UTF-8 JSON metadata, `u32` tensor count, then per tensor a `u64` length
//! followed by that many `f64` values, and finally a `u64` FNV-1a checksum
//! of every preceding byte.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"PFCK";
const CONTAINER_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn write_container(path: impl AsRef<Path>, meta: &serde_json::Value, tensors: &[&[f64]]) -> Result<()> {
    let path = path.as_ref();
    let meta = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let total: usize = tensors.iter().map(|t| 8 + 8 * t.len()).sum();
    let mut buf = Vec::with_capacity(24 + meta.len() + total + 8);
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in *t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 4 + 4 + 8 + 4 + 8 || &data[..4] != CONTAINER_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let (body, tail) = data.split_at(data.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checkpoint(format!(
            "{}: checksum mismatch (truncated or corrupt)",
            path.display()
        )));
    }
    let mut cur = Cursor { data: body, pos: 4 };
    let version = cur.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = cur.u64()? as usize;
    let meta: serde_json::Value = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u64()? as usize;
        let bytes = cur.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad length".into()))?)?;
        tensors.push(
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok((meta, tensors))
}
