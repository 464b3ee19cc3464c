// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small pre-norm decoder-only transformer.
//!
//! Token and learned position embeddings feed `layer_count` blocks of
//! multi-head causal self-attention and a GELU feed-forward layer, each
//! wrapped in a residual connection with layer norm in front. Only the
//! final position is decoded. Interventions run inside the attention of
//! scoped layers, after softmax and before the weights mix the values,
//! so every later activation sees the rewrite. PAI instead scales image
//! scores before softmax and fuses logits with an image-free pass.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::DecoderConfig;
pub use params::{DecoderParams, LayerSlots, ParamLayout, Slot};

use crate::error::{Error, Result};
use crate::intervention::{pai_logit_fusion, AttentionTensor, InterventionKind, InterventionSpec, RowRewriteStats};
use crate::modality::{Modality, ModalityLayout};
use forward::{run, Hooks};

/// A binary answer, also used for ground-truth labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Answer::Yes
        } else {
            Answer::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        })
    }
}

impl FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            other => Err(Error::Format(format!("expected yes/no, got `{other}`"))),
        }
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final-position logits over the vocabulary.
    pub logits: Vec<f64>,
    /// Pre-intervention post-softmax weights, when capture was requested.
    pub captured_attention: Option<AttentionTensor>,
    /// Residual stream after each layer, `[T, model_dim]`, when capture was
    /// requested. For PAI these belong to the multimodal pass.
    pub hidden_states: Option<Vec<Array2<f64>>>,
    pub rewrite_stats: RowRewriteStats,
}

fn check_prompt(params: &DecoderParams, tokens: &[u32], layout: &ModalityLayout) -> Result<()> {
    if tokens.len() != layout.prompt_len() {
        return Err(Error::Shape(format!(
            "{} tokens but layout spans {}",
            tokens.len(),
            layout.prompt_len()
        )));
    }
    if tokens.len() > params.config().max_seq_len {
        return Err(Error::Shape(format!(
            "prompt of {} tokens exceeds max_seq_len {}",
            tokens.len(),
            params.config().max_seq_len
        )));
    }
    Ok(())
}

/// Runs the decoder over a prompt with `spec` applied inside the scoped
/// layers and returns the final-position logits.
///
/// With `capture` set, the output also carries the post-softmax attention
/// as it was *before* any rewrite (rounded to `f32`, the dump precision) and
/// the residual stream after every layer.
pub fn forward(
    params: &DecoderParams,
    tokens: &[u32],
    layout: &ModalityLayout,
    spec: &InterventionSpec,
    capture: bool,
) -> Result<ForwardOutput> {
    check_prompt(params, tokens, layout)?;
    spec.validate()?;
    let config = params.config();
    let layers = spec.scope.layer_range(config.layer_count)?;
    spec.scope.resolve(config.layer_count, config.head_count)?;

    let t = tokens.len();
    let mut hooks = Hooks {
        spec,
        layout: match spec.kind {
            InterventionKind::None => None,
            _ => Some(layout),
        },
        layers,
        capture: capture.then(|| AttentionTensor::zeros(config.layer_count, config.head_count, t, t)),
        stats: RowRewriteStats::default(),
        keep_trace: capture,
    };
    let trace = run(params, tokens, &mut hooks)?;

    let mut logits = trace.logits.to_vec();
    if let InterventionKind::Pai { alpha, .. } = spec.kind {
        // Image-free pass: same system and text tokens, image span removed.
        let image = layout.span(Modality::Image);
        let unimodal: Vec<u32> = tokens[..image.start]
            .iter()
            .chain(&tokens[image.end..])
            .copied()
            .collect();
        let none = InterventionSpec::none();
        let mut plain = Hooks::plain(&none);
        plain.keep_trace = false;
        let uni = run(params, &unimodal, &mut plain)?;
        logits = pai_logit_fusion(&logits, uni.logits.as_slice().expect("contiguous"), alpha)?;
    }

    let hidden_states = capture.then(|| {
        trace
            .layers
            .iter()
            .skip(1)
            .map(|l| l.input.clone())
            .chain(std::iter::once(trace.output.clone()))
            .collect()
    });
    let captured_attention = hooks.capture.take().map(|mut a| {
        a.round_to_f32();
        a
    });
    Ok(ForwardOutput {
        logits,
        captured_attention,
        hidden_states,
        rewrite_stats: hooks.stats,
    })
}

/// Constrained yes/no decoding: `Yes` iff the yes logit is strictly larger.
pub fn answer(output: &ForwardOutput, config: &DecoderConfig) -> Answer {
    answer_from_logits(&output.logits, config)
}

pub fn answer_from_logits(logits: &[f64], config: &DecoderConfig) -> Answer {
    Answer::from_bool(logits[config.yes_token_id as usize] > logits[config.no_token_id as usize])
}

/// Post-softmax, pre-intervention attention of every layer and head.
pub fn capture_attention(params: &DecoderParams, tokens: &[u32], layout: &ModalityLayout) -> Result<AttentionTensor> {
    let out = forward(params, tokens, layout, &InterventionSpec::none(), true)?;
    Ok(out.captured_attention.expect("capture requested"))
}

/// Cross-entropy of the final-position logits against `target` and its
/// gradient with respect to every parameter.
pub fn loss_and_gradient(params: &DecoderParams, tokens: &[u32], target: u32) -> Result<(f64, DecoderParams)> {
    let mut grads = DecoderParams::zeros(*params.config())?;
    let loss = accumulate_gradient(params, tokens, target, &mut grads)?;
    Ok((loss, grads))
}

/// Cross-entropy loss only, without a backward pass.
pub fn loss(params: &DecoderParams, tokens: &[u32], target: u32) -> Result<f64> {
    let none = InterventionSpec::none();
    let mut hooks = Hooks::plain(&none);
    hooks.keep_trace = false;
    let trace = run(params, tokens, &mut hooks)?;
    Ok(cross_entropy(trace.logits.view(), target).0)
}

/// Adds the gradient of one sample's loss into `grads` and returns the loss.
pub(crate) fn accumulate_gradient(
    params: &DecoderParams,
    tokens: &[u32],
    target: u32,
    grads: &mut DecoderParams,
) -> Result<f64> {
    if target as usize >= params.config().vocab_size {
        return Err(Error::Shape(format!("target {target} outside vocabulary")));
    }
    let none = InterventionSpec::none();
    let mut hooks = Hooks::plain(&none);
    let trace = run(params, tokens, &mut hooks)?;
    let (loss, dlogits) = cross_entropy(trace.logits.view(), target);
    backward::backward(params, &trace, dlogits.view(), grads);
    Ok(loss)
}

fn cross_entropy(logits: ArrayView1<f64>, target: u32) -> (f64, ndarray::Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[target as usize];
    let mut grad = exp / sum;
    grad[target as usize] -= 1.0;
    (loss, grad)
}
