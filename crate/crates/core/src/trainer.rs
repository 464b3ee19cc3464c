// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minibatch training of the toy decoder on the answer token.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::benchgen::{generate_coarse_task, generate_fine_task, Dataset, TaskFamily};
use crate::decoder::{self, accumulate_gradient, Answer, DecoderConfig, DecoderParams};
use crate::error::{Error, Result};
use crate::intervention::InterventionSpec;

pub use crate::decoder::{loss, loss_and_gradient};

/// Pairs per task family in the balanced probe set used for the reported yes-rate.
pub const PROBE_PAIRS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epoch_count: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epoch_count: 1,
            seed: 0,
            optimizer: Optimizer::default(),
            gradient_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            let unit = 0.0..1.0;
            if !unit.contains(&beta1) || !unit.contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Config(format!(
                    "Adam constants out of range: beta1={beta1}, beta2={beta2}, eps={eps}"
                )));
            }
        }
        if let Some(clip) = self.gradient_clip_norm {
            if !(clip > 0.0) {
                return Err(Error::Config(format!("gradient_clip_norm {clip} must be positive")));
            }
        }
        Ok(())
    }
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_train_accuracy: f64,
    /// Yes-rate on a balanced paired probe set.
    pub probe_yes_rate: f64,
    pub checksum: String,
}

impl TrainReport {
    /// `key=value` text record, one field per line.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let losses: Vec<String> = self.epoch_losses.iter().map(|l| l.to_string()).collect();
        writeln!(out, "epoch_losses={}", losses.join(",")).unwrap();
        writeln!(out, "final_train_accuracy={}", self.final_train_accuracy).unwrap();
        writeln!(out, "probe_yes_rate={}", self.probe_yes_rate).unwrap();
        writeln!(out, "checksum={}", self.checksum).unwrap();
        out
    }
}

/// Fan-in scaled normal initialisation (residual-branch outputs shrunk by
/// `sqrt(2 * layer_count)`), rounded to `f32` so a fresh model survives
/// a checkpoint round trip unchanged.
pub fn init_params(config: &DecoderConfig, seed: u64) -> Result<DecoderParams> {
    let mut params = DecoderParams::zeros(*config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.model_dim as f64;
    let f = config.feedforward_dim as f64;
    let depth = (2.0 * config.layer_count as f64).sqrt();
    let layout = params.layout().clone();

    let mut fill = |params: &mut DecoderParams, slot: decoder::Slot, sd: f64| {
        let normal = Normal::new(0.0, sd).expect("positive std");
        for v in &mut params.as_mut_slice()[slot.range()] {
            *v = normal.sample(&mut rng);
        }
    };
    fill(&mut params, layout.token_embedding, 1.0);
    fill(&mut params, layout.position_embedding, 1.0);
    for l in &layout.layers {
        fill(&mut params, l.query, 1.0 / d.sqrt());
        fill(&mut params, l.key, 1.0 / d.sqrt());
        fill(&mut params, l.value, 1.0 / d.sqrt());
        fill(&mut params, l.output, 1.0 / (d.sqrt() * depth));
        fill(&mut params, l.ff_in, 1.0 / d.sqrt());
        fill(&mut params, l.ff_out, 1.0 / (f.sqrt() * depth));
    }
    fill(&mut params, layout.unembed, 1.0 / d.sqrt());

    let ones = layout
        .layers
        .iter()
        .flat_map(|l| [l.attn_norm_gain, l.ff_norm_gain])
        .chain([layout.final_norm_gain]);
    for slot in ones {
        params.as_mut_slice()[slot.range()].fill(1.0);
    }
    params.round_to_f32();
    Ok(params)
}

/// Optimiser state over the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    learning_rate: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, learning_rate: f64, param_count: usize) -> Self {
        let moments = matches!(kind, Optimizer::Adam { .. });
        Self {
            kind,
            learning_rate,
            step: 0,
            first: if moments { vec![0.0; param_count] } else { Vec::new() },
            second: if moments { vec![0.0; param_count] } else { Vec::new() },
        }
    }

    pub fn step(&mut self, params: &mut DecoderParams, grads: &DecoderParams) {
        self.step += 1;
        let lr = self.learning_rate;
        let p = params.as_mut_slice();
        let g = grads.as_slice();
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in p.iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..p.len() {
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g[i] * g[i];
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    p[i] -= lr * m / (v.sqrt() + eps);
                }
            }
        }
    }
}

fn target_token(config: &DecoderConfig, label: Answer) -> u32 {
    match label {
        Answer::Yes => config.yes_token_id,
        Answer::No => config.no_token_id,
    }
}

fn check_dataset(params: &DecoderParams, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let config = params.config();
    if dataset.schema.vocab_size() != config.vocab_size {
        return Err(Error::Config(format!(
            "dataset vocabulary has {} tokens, model has {}",
            dataset.schema.vocab_size(),
            config.vocab_size
        )));
    }
    if let Some(p) = dataset.prompts.iter().find(|p| p.tokens.len() > config.max_seq_len) {
        return Err(Error::Config(format!(
            "prompt {} has {} tokens, max_seq_len is {}",
            p.id,
            p.tokens.len(),
            config.max_seq_len
        )));
    }
    Ok(())
}

/// Fraction of `dataset` prompts the model answers correctly without
/// intervention, and its yes-rate.
pub fn evaluate_plain(params: &DecoderParams, dataset: &Dataset) -> Result<(f64, f64)> {
    let none = InterventionSpec::none();
    let mut correct = 0usize;
    let mut yes = 0usize;
    for p in &dataset.prompts {
        let out = decoder::forward(params, &p.tokens, &p.layout, &none, false)?;
        let a = decoder::answer(&out, params.config());
        correct += usize::from(a == p.label);
        yes += usize::from(a.is_yes());
    }
    let n = dataset.len().max(1) as f64;
    Ok((correct as f64 / n, yes as f64 / n))
}

/// Balanced paired probe set matching the families present in `dataset`.
pub fn probe_set(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let image_len = dataset.prompts[0].layout.image_len();
    let has = |f: TaskFamily| dataset.prompts.iter().any(|p| p.family == f);
    let probe_seed = seed ^ 0x5052_4f42_4553_4554;
    let mut probe = if has(TaskFamily::Fine) {
        generate_fine_task(&dataset.schema, PROBE_PAIRS, image_len, probe_seed)?
    } else {
        generate_coarse_task(&dataset.schema, PROBE_PAIRS, image_len, probe_seed)?
    };
    if has(TaskFamily::Fine) && has(TaskFamily::Coarse) {
        let coarse = generate_coarse_task(&dataset.schema, PROBE_PAIRS, image_len, probe_seed + 1)?;
        let offset = probe.prompts.len();
        probe.prompts.extend(coarse.prompts.into_iter().map(|mut p| {
            p.id += offset;
            p.pair_id = p.pair_id.map(|id| id + PROBE_PAIRS);
            p
        }));
    }
    Ok(probe)
}

/// Trains `params` on `dataset` with cross-entropy on the answer token.
///
/// Deterministic in the initial parameters, the dataset and `config`. After
/// at least one step the parameters are rounded to `f32`, the checkpoint
/// precision, so the returned model is exactly what a checkpoint stores.
pub fn train(params: DecoderParams, dataset: &Dataset, config: &TrainConfig) -> Result<(DecoderParams, TrainReport)> {
    config.validate()?;
    check_dataset(&params, dataset)?;
    let mut params = params;
    let model = *params.config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, params.len());
    let mut grads = DecoderParams::zeros(model)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epoch_count);

    for epoch in 0..config.epoch_count {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            grads.as_mut_slice().fill(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &dataset.prompts[i];
                batch_loss += accumulate_gradient(&params, &p.tokens, target_token(&model, p.label), &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            total += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            grads.as_mut_slice().iter_mut().for_each(|g| *g *= inv);
            if let Some(clip) = config.gradient_clip_norm {
                let norm = grads.as_slice().iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    grads.as_mut_slice().iter_mut().for_each(|g| *g *= s);
                }
            }
            opt.step(&mut params, &grads);
            if !params.all_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    if config.epoch_count > 0 {
        params.round_to_f32();
    }

    let (final_train_accuracy, _) = evaluate_plain(&params, dataset)?;
    let probe = probe_set(dataset, config.seed)?;
    let (_, probe_yes_rate) = evaluate_plain(&params, &probe)?;
    let checksum = params.checksum();
    Ok((
        params,
        TrainReport {
            epoch_losses,
            final_train_accuracy,
            probe_yes_rate,
            checksum,
        },
    ))
}

/// Largest relative difference between the analytic gradient and central
/// finite differences over a seeded sample of parameters.
///
/// Parameters are drawn from every tensor so each block of the backward pass
/// is exercised; at least 100 are checked. Relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(params: &DecoderParams, tokens: &[u32], target: u32, epsilon: f64, seed: u64) -> Result<f64> {
    if !(1e-5..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-5, 1e-3]")));
    }
    let (_, analytic) = loss_and_gradient(params, tokens, target)?;
    if !analytic.all_finite() {
        return Err(Error::Numerical("non-finite analytic gradient".into()));
    }
    let slots = params.layout().named_slots();
    let per_slot = 100usize.div_ceil(slots.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (_, slot) in &slots {
        for _ in 0..per_slot {
            let idx = slot.offset + rng.gen_range(0..slot.len());
            let original = probe.as_slice()[idx];
            probe.as_mut_slice()[idx] = original + epsilon;
            let up = loss(&probe, tokens, target)?;
            probe.as_mut_slice()[idx] = original - epsilon;
            let down = loss(&probe, tokens, target)?;
            probe.as_mut_slice()[idx] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(Error::Numerical(format!("non-finite finite difference at {idx}")));
            }
            let a = analytic.as_slice()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{generate_training_set, Distractor, TrainingSetSpec, VocabSchema};

    fn tiny_schema() -> VocabSchema {
        VocabSchema {
            categories: 3,
            objects_per_category: 3,
            system_len: 2,
        }
    }

    fn tiny_config(layers: usize) -> DecoderConfig {
        tiny_schema().decoder_config(layers, 2, 8, 16, 16)
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let c = tiny_config(4);
        let a = init_params(&c, 1).unwrap();
        let b = init_params(&c, 1).unwrap();
        let other = init_params(&c, 2).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), other.checksum());
        assert!(a.all_finite());
    }

    #[test]
    fn zero_learning_rate_step_is_identity() {
        let c = tiny_config(4);
        let mut params = init_params(&c, 3).unwrap();
        let before = params.clone();
        let (_, grads) = loss_and_gradient(&params, &[0, 1, 13, 4, 9, 6], c.yes_token_id).unwrap();
        for kind in [Optimizer::Sgd, Optimizer::default()] {
            let mut opt = OptimizerState::new(kind, 0.0, params.len());
            opt.step(&mut params, &grads);
            assert_eq!(params, before);
        }
    }

    #[test]
    fn zero_epochs_leave_params_alone() {
        let c = tiny_config(4);
        let params = init_params(&c, 3).unwrap();
        let spec = TrainingSetSpec {
            size: 10,
            yes_fraction: 0.5,
            task_mix: 1.0,
            image_len: 3,
            distractor: Distractor::Adversarial,
        };
        let data = generate_training_set(&tiny_schema(), &spec, 0).unwrap();
        let config = TrainConfig {
            epoch_count: 0,
            ..TrainConfig::default()
        };
        let (out, report) = train(params.clone(), &data, &config).unwrap();
        assert_eq!(out, params);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = tiny_schema().decoder_config(4, 2, 8, 16, 16);
        let params = init_params(&c, 7).unwrap();
        let tokens = [0, 1, 14, 16, 10, 4, 16, 6];
        let err = grad_check(&params, &tokens, c.no_token_id, 1e-4, 0).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
        assert_eq!(grad_check(&params, &tokens, c.no_token_id, 1e-4, 0).unwrap(), err);
    }

    #[test]
    fn unused_token_rows_get_zero_gradient() {
        let c = tiny_config(4);
        let params = init_params(&c, 7).unwrap();
        let (_, g) = loss_and_gradient(&params, &[0, 1, 14, 16, 4, 16, 6], c.yes_token_id).unwrap();
        let unused = 12usize;
        assert!(g.matrix(g.layout().token_embedding).row(unused).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn memorisable_batch_loss_decreases() {
        let c = tiny_config(4);
        let mut params = init_params(&c, 11).unwrap();
        let samples: [(&[u32], u32); 2] = [(&[0, 1, 14, 16, 4, 16, 6], c.yes_token_id), (&[0, 1, 14, 16, 4, 17, 6], c.no_token_id)];
        let mut opt = OptimizerState::new(Optimizer::default(), 1e-3, params.len());
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let mut grads = DecoderParams::zeros(c).unwrap();
            let mut total = 0.0;
            for (tokens, target) in samples {
                total += accumulate_gradient(&params, tokens, target, &mut grads).unwrap();
            }
            assert!(total < last, "loss {total} did not drop below {last}");
            last = total;
            opt.step(&mut params, &grads);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let bad_adam = TrainConfig {
            optimizer: Optimizer::Adam { beta1: 1.0, beta2: 0.999, eps: 1e-8 },
            ..Default::default()
        };
        assert!(bad_adam.validate().is_err());
    }
}
