// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter checkpoint files.
//!
//! Little-endian binary:
//!
//! ```text
//! magic            4 bytes  "MBL1"
//! layer_count      u32
//! head_count       u32
//! model_dim        u32
//! feedforward_dim  u32
//! vocab_size       u32
//! max_seq_len      u32
//! yes_token_id     u32
//! no_token_id      u32
//! parameters       f32 × N, in the order documented in `decoder::params`
//! ```
//!
//! Parameters are held as `f64` in memory but trained models are rounded to
//! `f32` before saving, so load → save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use super::{DecoderConfig, DecoderParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MBL1";
const HEADER_LEN: usize = 4 + 8 * 4;

pub fn encode_checkpoint(params: &DecoderParams) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for field in [
        c.layer_count as u32,
        c.head_count as u32,
        c.model_dim as u32,
        c.feedforward_dim as u32,
        c.vocab_size as u32,
        c.max_seq_len as u32,
        c.yes_token_id,
        c.no_token_id,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for v in params.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DecoderParams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "checkpoint truncated: {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
    };
    let config = DecoderConfig {
        layer_count: field(0) as usize,
        head_count: field(1) as usize,
        model_dim: field(2) as usize,
        feedforward_dim: field(3) as usize,
        vocab_size: field(4) as usize,
        max_seq_len: field(5) as usize,
        yes_token_id: field(6),
        no_token_id: field(7),
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let count = super::params::ParamLayout::new(&config).total;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(Error::Format(format!(
            "checkpoint body has {} bytes, expected {}",
            body.len(),
            4 * count
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    DecoderParams::from_flat(config, data)
}

pub fn save_checkpoint(params: &DecoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DecoderParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
