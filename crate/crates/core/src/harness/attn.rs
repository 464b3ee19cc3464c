// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention dump files.
//!
//! Little-endian binary:
//!
//! ```text
//! magic         4 bytes  "ATTN"
//! version       u32      1
//! record_count  u32
//! per record:
//!   prompt_id                          u32
//!   system_len, image_len, text_len    u32 × 3
//!   layers, heads, queries, keys       u32 × 4
//!   weights                            f32 × layers·heads·queries·keys, row-major
//! ```
//!
//! Captured attention is already rounded to `f32`, so a dump reloads to the
//! exact tensors the decoder produced.

use std::fs;
use std::path::Path;

use crate::benchgen::Dataset;
use crate::decoder::{self, DecoderParams};
use crate::error::{Error, Result};
use crate::intervention::AttentionTensor;
use crate::modality::ModalityLayout;

pub const ATTENTION_MAGIC: &[u8; 4] = b"ATTN";
const VERSION: u32 = 1;

/// Pre-intervention attention of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub prompt_id: usize,
    pub layout: ModalityLayout,
    pub attention: AttentionTensor,
}

pub fn encode_attention(records: &[AttentionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ATTENTION_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let [s, i, t] = r.layout.lens();
        let [l, h, q, k] = r.attention.dims();
        for v in [r.prompt_id, s, i, t, l, h, q, k] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for w in r.attention.weights() {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "attention dump truncated at byte {} (need {n} more, {} left)",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a whole dump. Any truncation or inconsistency is an error; no
/// partial result is returned.
pub fn decode_attention(bytes: &[u8]) -> Result<Vec<AttentionRecord>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != ATTENTION_MAGIC {
        return Err(Error::Format("not an attention dump (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported attention dump version {version}")));
    }
    let count = c.u32()?;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let prompt_id = c.u32()?;
        let layout = ModalityLayout::new(c.u32()?, c.u32()?, c.u32()?)
            .map_err(|e| Error::Format(format!("record for prompt {prompt_id}: {e}")))?;
        let (l, h, q, k) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
        if k != layout.prompt_len() {
            return Err(Error::Format(format!(
                "record for prompt {prompt_id}: {k} keys but layout spans {}",
                layout.prompt_len()
            )));
        }
        let n = l
            .checked_mul(h)
            .and_then(|x| x.checked_mul(q))
            .and_then(|x| x.checked_mul(k))
            .ok_or_else(|| Error::Format("attention dims overflow".into()))?;
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Format("attention dims overflow".into()))?)?;
        let weights = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let attention = AttentionTensor::from_weights(l, h, q, k, weights)
            .map_err(|e| Error::Format(format!("record for prompt {prompt_id}: {e}")))?;
        records.push(AttentionRecord {
            prompt_id,
            layout,
            attention,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after attention dump", bytes.len() - c.pos)));
    }
    Ok(records)
}

/// Captures every prompt's attention and writes the dump. Returns the
/// number of records.
pub fn dump_attention(params: &DecoderParams, dataset: &Dataset, path: impl AsRef<Path>) -> Result<usize> {
    let records = dataset
        .prompts
        .iter()
        .map(|p| {
            Ok(AttentionRecord {
                prompt_id: p.id,
                layout: p.layout,
                attention: decoder::capture_attention(params, &p.tokens, &p.layout)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = path.as_ref();
    fs::write(path, encode_attention(&records)).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn load_attention(path: impl AsRef<Path>) -> Result<Vec<AttentionRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_attention(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> AttentionRecord {
        let layout = ModalityLayout::new(1, 1, 1).unwrap();
        let w = vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.25, 0.25, 0.5];
        AttentionRecord {
            prompt_id: 3,
            layout,
            attention: AttentionTensor::from_weights(1, 1, 3, 3, w).unwrap(),
        }
    }

    #[test]
    fn round_trip() {
        let rs = vec![record(), record()];
        assert_eq!(decode_attention(&encode_attention(&rs)).unwrap(), rs);
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = encode_attention(&[record()]);
        for cut in 0..bytes.len() {
            assert!(matches!(decode_attention(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_attention(&extra).is_err());
    }
}
