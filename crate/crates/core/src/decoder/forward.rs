// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass with attention hooks and an optional activation trace.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::DecoderParams;
use crate::error::{Error, Result};
use crate::intervention::{AttentionTensor, InterventionKind, InterventionSpec, RowOutcome, RowRewriteStats};
use crate::modality::{Modality, ModalityLayout};

pub(crate) const NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

/// Row-wise layer norm output plus what its backward pass needs.
pub(crate) struct NormTrace {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub output: Array2<f64>,
}

pub(crate) fn layer_norm(x: ArrayView2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> NormTrace {
    let (rows, cols) = x.dim();
    let mut normalized = Array2::zeros((rows, cols));
    let mut inv_std = Array1::zeros(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[r] = is;
        normalized
            .row_mut(r)
            .iter_mut()
            .zip(row)
            .for_each(|(n, v)| *n = (v - mean) * is);
    }
    let output = &normalized * &gain + &bias;
    NormTrace {
        normalized,
        inv_std,
        output,
    }
}

pub(crate) struct LayerTrace {
    pub input: Array2<f64>,
    pub attn_norm: NormTrace,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Post-softmax (and post-rewrite) weights per head, `[T, T]`.
    pub probs: Vec<Array2<f64>>,
    pub mixed: Array2<f64>,
    pub ff_norm: NormTrace,
    pub pre_act: Array2<f64>,
    pub act: Array2<f64>,
}

pub(crate) struct Trace {
    pub tokens: Vec<u32>,
    pub layers: Vec<LayerTrace>,
    /// Residual stream leaving the last layer, `[T, D]`.
    pub output: Array2<f64>,
    pub final_norm: NormTrace,
    pub logits: Array1<f64>,
}

/// Per-forward intervention state.
pub(crate) struct Hooks<'a> {
    pub spec: &'a InterventionSpec,
    pub layout: Option<&'a ModalityLayout>,
    pub layers: Range<usize>,
    pub capture: Option<AttentionTensor>,
    pub stats: RowRewriteStats,
    pub keep_trace: bool,
}

impl<'a> Hooks<'a> {
    pub fn plain(spec: &'a InterventionSpec) -> Self {
        Self {
            spec,
            layout: None,
            layers: 0..0,
            capture: None,
            stats: RowRewriteStats::default(),
            keep_trace: true,
        }
    }

    fn active(&self, layer: usize, head: usize) -> bool {
        self.layout.is_some() && self.spec.scope.contains(&self.layers, layer, head)
    }
}

/// Embeds `tokens` at positions `0..T` and runs every layer.
///
/// Layer traces are always built because the backward pass needs them; when
/// `hooks.keep_trace` is false they are dropped as soon as the next layer
/// no longer needs them.
pub(crate) fn run(params: &DecoderParams, tokens: &[u32], hooks: &mut Hooks<'_>) -> Result<Trace> {
    let config = params.config();
    let layout = params.layout();
    let t = tokens.len();
    if t == 0 || t > config.max_seq_len {
        return Err(Error::Shape(format!(
            "sequence length {t} outside 1..={}",
            config.max_seq_len
        )));
    }
    let d = config.model_dim;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let tok_emb = params.matrix(layout.token_embedding);
    let pos_emb = params.matrix(layout.position_embedding);
    let mut x = Array2::<f64>::zeros((t, d));
    for (i, &tok) in tokens.iter().enumerate() {
        let tok = tok as usize;
        if tok >= config.vocab_size {
            return Err(Error::Shape(format!("token {tok} outside vocabulary")));
        }
        let mut row = x.row_mut(i);
        row.assign(&tok_emb.row(tok));
        row += &pos_emb.row(i);
    }

    let pai_scale = match hooks.spec.kind {
        InterventionKind::Pai { image_scale, .. } => Some(image_scale),
        _ => None,
    };

    let mut traces = Vec::with_capacity(config.layer_count);
    for (l, slots) in layout.layers.iter().enumerate() {
        let attn_norm = layer_norm(
            x.view(),
            params.vector(slots.attn_norm_gain),
            params.vector(slots.attn_norm_bias),
        );
        let h = &attn_norm.output;
        let q = h.dot(&params.matrix(slots.query));
        let k = h.dot(&params.matrix(slots.key));
        let v = h.dot(&params.matrix(slots.value));

        let mut mixed = Array2::<f64>::zeros((t, d));
        let mut probs = Vec::with_capacity(config.head_count);
        for head in 0..config.head_count {
            let cols = head * dh..(head + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut p = qh.dot(&kh.t());
            let active = hooks.active(l, head);

            for i in 0..t {
                let mut row = p.row_mut(i);
                let row = row.as_slice_mut().expect("standard layout");
                for w in &mut row[..=i] {
                    *w *= scale;
                }
                if let (true, Some(image_scale), Some(lay)) = (active, pai_scale, hooks.layout) {
                    let image = lay.span(Modality::Image);
                    let visible = image.start..image.end.min(i + 1);
                    if visible.is_empty() {
                        hooks.stats.record(RowOutcome::SkippedZeroRecipient);
                    } else {
                        row[visible].iter_mut().for_each(|w| *w *= image_scale);
                        hooks.stats.record(RowOutcome::Modified);
                    }
                }
                let max = row[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for w in &mut row[..=i] {
                    *w = (*w - max).exp();
                    sum += *w;
                }
                for w in &mut row[..=i] {
                    *w /= sum;
                }
                for w in &mut row[i + 1..] {
                    *w = 0.0;
                }
            }

            if let Some(cap) = hooks.capture.as_mut() {
                cap.head_block_mut(l, head)
                    .copy_from_slice(p.as_slice().expect("standard layout"));
            }
            if active && hooks.spec.rewrites_rows() {
                let lay = hooks.layout.expect("active implies layout");
                for i in 0..t {
                    let mut row = p.row_mut(i);
                    let outcome = hooks
                        .spec
                        .rewrite_row(row.as_slice_mut().expect("standard layout"), lay)?;
                    hooks.stats.record(outcome);
                }
            }
            mixed.slice_mut(s![.., cols]).assign(&p.dot(&vh));
            probs.push(p);
        }

        let mid = &x + &mixed.dot(&params.matrix(slots.output));
        let ff_norm = layer_norm(
            mid.view(),
            params.vector(slots.ff_norm_gain),
            params.vector(slots.ff_norm_bias),
        );
        let pre_act = ff_norm.output.dot(&params.matrix(slots.ff_in)) + &params.vector(slots.ff_in_bias);
        let act = pre_act.mapv(gelu);
        let out = &mid + &act.dot(&params.matrix(slots.ff_out)) + &params.vector(slots.ff_out_bias);

        let input = std::mem::replace(&mut x, out);
        if hooks.keep_trace {
            traces.push(LayerTrace {
                input,
                attn_norm,
                q,
                k,
                v,
                probs,
                mixed,
                ff_norm,
                pre_act,
                act,
            });
        }
    }

    let last = x.slice(s![t - 1..t, ..]);
    let final_norm = layer_norm(
        last,
        params.vector(layout.final_norm_gain),
        params.vector(layout.final_norm_bias),
    );
    let logits = final_norm
        .output
        .dot(&params.matrix(layout.unembed))
        .index_axis_move(Axis(0), 0);
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logit {bad}")));
    }

    Ok(Trace {
        tokens: tokens.to_vec(),
        layers: traces,
        output: x,
        final_norm,
        logits,
    })
}
