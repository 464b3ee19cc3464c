// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat parameter storage with named views.
//!
//! All weights live in one `Vec<f64>`, which keeps optimiser updates,
//! checksums and checkpoint I/O trivial. Tensors are laid out in this order,
//! each row-major:
//!
//! ```text
//! token_embedding       [vocab_size, model_dim]
//! position_embedding    [max_seq_len, model_dim]
//! per layer:
//!   attn_norm_gain      [model_dim]
//!   attn_norm_bias      [model_dim]
//!   query               [model_dim, model_dim]
//!   key                 [model_dim, model_dim]
//!   value               [model_dim, model_dim]
//!   output              [model_dim, model_dim]
//!   ff_norm_gain        [model_dim]
//!   ff_norm_bias        [model_dim]
//!   ff_in               [model_dim, feedforward_dim]
//!   ff_in_bias          [feedforward_dim]
//!   ff_out              [feedforward_dim, model_dim]
//!   ff_out_bias         [model_dim]
//! final_norm_gain       [model_dim]
//! final_norm_bias       [model_dim]
//! unembed               [model_dim, vocab_size]
//! ```
//!
//! Projections multiply from the right: `q = h · query`.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

use super::DecoderConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlots {
    pub attn_norm_gain: Slot,
    pub attn_norm_bias: Slot,
    pub query: Slot,
    pub key: Slot,
    pub value: Slot,
    pub output: Slot,
    pub ff_norm_gain: Slot,
    pub ff_norm_bias: Slot,
    pub ff_in: Slot,
    pub ff_in_bias: Slot,
    pub ff_out: Slot,
    pub ff_out_bias: Slot,
}

/// Offsets of every named tensor within the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub token_embedding: Slot,
    pub position_embedding: Slot,
    pub layers: Vec<LayerSlots>,
    pub final_norm_gain: Slot,
    pub final_norm_bias: Slot,
    pub unembed: Slot,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        slot
    }
}

impl ParamLayout {
    pub fn new(config: &DecoderConfig) -> Self {
        let d = config.model_dim;
        let f = config.feedforward_dim;
        let mut c = Cursor(0);
        let token_embedding = c.take(config.vocab_size, d);
        let position_embedding = c.take(config.max_seq_len, d);
        let layers = (0..config.layer_count)
            .map(|_| LayerSlots {
                attn_norm_gain: c.take(1, d),
                attn_norm_bias: c.take(1, d),
                query: c.take(d, d),
                key: c.take(d, d),
                value: c.take(d, d),
                output: c.take(d, d),
                ff_norm_gain: c.take(1, d),
                ff_norm_bias: c.take(1, d),
                ff_in: c.take(d, f),
                ff_in_bias: c.take(1, f),
                ff_out: c.take(f, d),
                ff_out_bias: c.take(1, d),
            })
            .collect();
        let final_norm_gain = c.take(1, d);
        let final_norm_bias = c.take(1, d);
        let unembed = c.take(d, config.vocab_size);
        Self {
            token_embedding,
            position_embedding,
            layers,
            final_norm_gain,
            final_norm_bias,
            unembed,
            total: c.0,
        }
    }

    /// Every slot in storage order with a descriptive name.
    pub fn named_slots(&self) -> Vec<(String, Slot)> {
        let mut out = vec![
            ("token_embedding".to_string(), self.token_embedding),
            ("position_embedding".to_string(), self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, slot) in [
                ("attn_norm_gain", l.attn_norm_gain),
                ("attn_norm_bias", l.attn_norm_bias),
                ("query", l.query),
                ("key", l.key),
                ("value", l.value),
                ("output", l.output),
                ("ff_norm_gain", l.ff_norm_gain),
                ("ff_norm_bias", l.ff_norm_bias),
                ("ff_in", l.ff_in),
                ("ff_in_bias", l.ff_in_bias),
                ("ff_out", l.ff_out),
                ("ff_out_bias", l.ff_out_bias),
            ] {
                out.push((format!("layers.{i}.{name}"), slot));
            }
        }
        out.push(("final_norm_gain".into(), self.final_norm_gain));
        out.push(("final_norm_bias".into(), self.final_norm_bias));
        out.push(("unembed".into(), self.unembed));
        out
    }
}

/// Decoder weights: a config plus one flat `f64` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    config: DecoderConfig,
    layout: ParamLayout,
    data: Vec<f64>,
}

impl DecoderParams {
    /// All-zero parameters; the usual starting point for a gradient buffer.
    pub fn zeros(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let data = vec![0.0; layout.total];
        Ok(Self { config, layout, data })
    }

    pub fn from_flat(config: DecoderConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if data.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn matrix(&self, slot: Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.rows, slot.cols), &self.data[slot.range()])
            .expect("slot within buffer")
    }

    pub fn matrix_mut(&mut self, slot: Slot) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut self.data[slot.range()])
            .expect("slot within buffer")
    }

    pub fn vector(&self, slot: Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[slot.range()])
    }

    pub fn vector_mut(&mut self, slot: Slot) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[slot.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }

    /// Hex SHA-256 over the little-endian `f32` image of the parameters,
    /// i.e. over exactly what a checkpoint stores.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for v in &self.data {
            hasher.update((*v as f32).to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
