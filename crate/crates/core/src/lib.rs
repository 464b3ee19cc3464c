// SPDX-License-Identifier: MIT OR Apache-2.0

//! Modality-level attention interventions on a toy decoder-only
//! vision-language transformer.
//!
//! Prompts are split into three contiguous modalities (system, image, text).
//! The crate provides:
//!
//! - [`modality`]: prompt layouts and per-modality attention mass.
//! - [`intervention`]: proportional and pairwise redistribution, ablation,
//!   scaling, AD-HH and PAI, scoped to layer quarters or ranges.
//! - [`decoder`]: a small pre-norm transformer whose post-softmax attention
//!   rows are rewritten in the forward pass.
//! - [`benchgen`]: synthetic paired yes/no benchmarks and biased training sets.
//! - [`trainer`]: cross-entropy training with a hand-derived backward pass.
//! - [`metrics`]: simple accuracy, paired accuracy, yes-rate and its deltas.
//! - [`harness`]: config-driven experiments, sweeps, reports and attention dumps.

pub mod benchgen;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod intervention;
pub mod metrics;
pub mod modality;
pub mod trainer;

pub use error::{Error, Result};
pub use intervention::{AttentionTensor, InterventionKind, InterventionSpec, LayerScope};
pub use modality::{Modality, ModalityLayout, ModalityMass};
