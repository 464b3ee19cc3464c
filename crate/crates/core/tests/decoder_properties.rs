// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use modality_lab::decoder::{self, answer_from_logits, decode_checkpoint, encode_checkpoint, DecoderConfig, DecoderParams};
use modality_lab::modality::modality_mass;
use modality_lab::{InterventionSpec, LayerScope, Modality, ModalityLayout};
use ndarray::ArrayView2;

/// Straight-line re-implementation of one pre-norm block plus the head,
/// written with plain vectors. Used as an oracle for the library forward.
mod oracle {
    use super::*;

    pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
    }

    pub fn vec_mat(x: &[f64], w: ArrayView2<f64>) -> Vec<f64> {
        (0..w.ncols()).map(|j| (0..w.nrows()).map(|i| x[i] * w[[i, j]]).sum()).collect()
    }

    fn gelu(u: f64) -> f64 {
        0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
    }

    fn row(params: &DecoderParams, slot: modality_lab::decoder::Slot) -> Vec<f64> {
        params.vector(slot).to_vec()
    }

    /// Logits with only layer 0 active (later layers must be zeroed) and an
    /// optional ablation of the system span in layer 0.
    pub fn logits(params: &DecoderParams, tokens: &[u32], layout: &ModalityLayout, ablate_system: bool) -> Vec<f64> {
        let c = *params.config();
        let pl = params.layout();
        let s = &pl.layers[0];
        let t = tokens.len();
        let dh = c.head_dim();
        let x: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(i, &tok)| {
                let e = params.matrix(pl.token_embedding).row(tok as usize).to_vec();
                let p = params.matrix(pl.position_embedding).row(i).to_vec();
                e.iter().zip(&p).map(|(a, b)| a + b).collect()
            })
            .collect();
        let h: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| layer_norm(xi, &row(params, s.attn_norm_gain), &row(params, s.attn_norm_bias)))
            .collect();
        let q: Vec<Vec<f64>> = h.iter().map(|v| vec_mat(v, params.matrix(s.query))).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|v| vec_mat(v, params.matrix(s.key))).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|v| vec_mat(v, params.matrix(s.value))).collect();

        let last = t - 1;
        let mut out = vec![0.0; c.model_dim];
        let mut per_pos = Vec::with_capacity(t);
        for i in 0..t {
            let mut mixed = vec![0.0; c.model_dim];
            for head in 0..c.head_count {
                let cols = head * dh..(head + 1) * dh;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| cols.clone().map(|d| q[i][d] * k[j][d]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..=i {
                    let mut p = exps[j] / z;
                    if ablate_system && j < layout.system_len() {
                        p = 0.0;
                    }
                    for d in cols.clone() {
                        mixed[d] += p * v[j][d];
                    }
                }
            }
            let attn_out = vec_mat(&mixed, params.matrix(s.output));
            let mid: Vec<f64> = x[i].iter().zip(&attn_out).map(|(a, b)| a + b).collect();
            let h2 = layer_norm(&mid, &row(params, s.ff_norm_gain), &row(params, s.ff_norm_bias));
            let pre: Vec<f64> = vec_mat(&h2, params.matrix(s.ff_in))
                .iter()
                .zip(row(params, s.ff_in_bias))
                .map(|(a, b)| gelu(a + b))
                .collect();
            let ff = vec_mat(&pre, params.matrix(s.ff_out));
            per_pos.push(
                mid.iter()
                    .zip(&ff)
                    .zip(row(params, s.ff_out_bias))
                    .map(|((m, f), b)| m + f + b)
                    .collect::<Vec<f64>>(),
            );
        }
        out.copy_from_slice(&per_pos[last]);
        let fin = layer_norm(&out, &row(params, pl.final_norm_gain), &row(params, pl.final_norm_bias));
        vec_mat(&fin, params.matrix(pl.unembed))
    }
}

/// Random model whose layers after the first are all-zero, hence identity.
fn one_active_layer(seed: u64) -> DecoderParams {
    let config = DecoderConfig {
        layer_count: 4,
        head_count: 2,
        model_dim: 4,
        feedforward_dim: 6,
        vocab_size: 7,
        max_seq_len: 8,
        yes_token_id: 1,
        no_token_id: 2,
    };
    let mut params = common::uniform_params(config, 0.8, seed);
    let layers = params.layout().layers[1..].to_vec();
    for slots in layers {
        for slot in [
            slots.attn_norm_gain,
            slots.attn_norm_bias,
            slots.query,
            slots.key,
            slots.value,
            slots.output,
            slots.ff_norm_gain,
            slots.ff_norm_bias,
            slots.ff_in,
            slots.ff_in_bias,
            slots.ff_out,
            slots.ff_out_bias,
        ] {
            params.as_mut_slice()[slot.range()].fill(0.0);
        }
    }
    params
}

#[test]
fn forward_matches_hand_computed_block() {
    let layout = ModalityLayout::new(2, 3, 1).unwrap();
    let tokens = [0, 3, 4, 6, 5, 2];
    for seed in 0..5 {
        let params = one_active_layer(seed);
        for (spec, ablate) in [
            (InterventionSpec::none(), false),
            (InterventionSpec::ablation(Modality::System, LayerScope::range(0, 1)), true),
        ] {
            let got = decoder::forward(&params, &tokens, &layout, &spec, false).unwrap().logits;
            let want = oracle::logits(&params, &tokens, &layout, ablate);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "seed {seed} ablate {ablate}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn answer_depends_only_on_the_two_answer_logits() {
    let params = common::small_model(4, 3);
    let config = *params.config();
    let data = common::probe_prompts(10, 1);
    for p in &data.prompts {
        let out = decoder::forward(&params, &p.tokens, &p.layout, &InterventionSpec::none(), false).unwrap();
        let base = answer_from_logits(&out.logits, &config);
        let mut logits = out.logits.clone();
        for (i, l) in logits.iter_mut().enumerate() {
            if i as u32 != config.yes_token_id && i as u32 != config.no_token_id {
                *l = if i % 2 == 0 { 1e6 } else { -1e6 };
            }
        }
        assert_eq!(answer_from_logits(&logits, &config), base);
    }
    let mut tie = vec![0.0; config.vocab_size];
    tie[config.yes_token_id as usize] = 2.5;
    tie[config.no_token_id as usize] = 2.5;
    assert!(!answer_from_logits(&tie, &config).is_yes());
}

#[test]
fn captured_attention_is_pre_intervention_and_valid() {
    let params = common::small_model(8, 11);
    let data = common::probe_prompts(3, 2);
    for p in &data.prompts {
        let plain = decoder::capture_attention(&params, &p.tokens, &p.layout).unwrap();
        plain.validate(1e-6).unwrap();
        let spec = InterventionSpec::proportional(Modality::System, 1.0, LayerScope::quarter(1));
        let out = decoder::forward(&params, &p.tokens, &p.layout, &spec, true).unwrap();
        // Layer 0 sees unmodified inputs; its capture must predate its own rewrite.
        let captured = out.captured_attention.unwrap();
        for l in 0..1 {
            for h in 0..2 {
                assert_eq!(captured.head_block(l, h), plain.head_block(l, h));
            }
        }
        let m = modality_mass(&captured, &p.layout, &LayerScope::quarter(1)).unwrap();
        assert!(m.system > 0.0, "capture must precede the rewrite");
        assert!(out.rewrite_stats.rows_modified > 0);
    }
}

#[test]
fn ablation_and_redistribution_diverge() {
    let params = common::small_model(8, 5);
    let data = common::probe_prompts(5, 3);
    for p in &data.prompts {
        let scope = LayerScope::quarter(4);
        let abl = decoder::forward(&params, &p.tokens, &p.layout, &InterventionSpec::ablation(Modality::System, scope.clone()), false).unwrap();
        let red = decoder::forward(&params, &p.tokens, &p.layout, &InterventionSpec::proportional(Modality::System, 1.0, scope), false).unwrap();
        assert_ne!(abl.logits, red.logits);
    }
}

#[test]
fn pai_runs_both_passes_and_changes_logits() {
    let params = common::small_model(4, 8);
    let data = common::probe_prompts(3, 4);
    for p in &data.prompts {
        let base = decoder::forward(&params, &p.tokens, &p.layout, &InterventionSpec::none(), false).unwrap();
        let pai = decoder::forward(&params, &p.tokens, &p.layout, &InterventionSpec::pai(0.5, 1.5, LayerScope::global()), false).unwrap();
        assert_ne!(base.logits, pai.logits);
        // Every query row after the first image token is rescaled.
        let t = p.tokens.len();
        let rows_seeing_image = (t - p.layout.system_len()) as u64;
        assert_eq!(pai.rewrite_stats.rows_modified, 4 * 2 * rows_seeing_image);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let params = common::small_model(4, 21);
    let bytes = encode_checkpoint(&params);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.as_slice(), params.as_slice());
    assert_eq!(encode_checkpoint(&back), bytes);
    assert_eq!(back.checksum(), params.checksum());
    for cut in [0, 3, 20, bytes.len() - 1] {
        assert!(decode_checkpoint(&bytes[..cut]).is_err());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mbl");
    decoder::save_checkpoint(&params, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(decoder::load_checkpoint(&path).unwrap().as_slice(), params.as_slice());
}

#[test]
fn out_of_range_scopes_are_rejected() {
    let params = common::small_model(4, 1);
    let p = &common::probe_prompts(1, 1).prompts[0];
    let spec = InterventionSpec::proportional(Modality::System, 1.0, LayerScope::range(2, 9));
    assert!(decoder::forward(&params, &p.tokens, &p.layout, &spec, false).is_err());
    let spec = InterventionSpec::proportional(Modality::System, 1.0, LayerScope::global().with_heads(vec![5]));
    assert!(decoder::forward(&params, &p.tokens, &p.layout, &spec, false).is_err());
}
