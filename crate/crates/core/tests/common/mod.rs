// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use modality_lab::benchgen::{generate_fine_task, Dataset, VocabSchema};
use modality_lab::decoder::{DecoderConfig, DecoderParams};
use modality_lab::trainer::init_params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_schema() -> VocabSchema {
    VocabSchema {
        categories: 4,
        objects_per_category: 4,
        system_len: 3,
    }
}

pub fn small_config(layer_count: usize) -> DecoderConfig {
    small_schema().decoder_config(layer_count, 2, 16, 32, 16)
}

/// Randomly initialised model over [`small_schema`].
pub fn small_model(layer_count: usize, seed: u64) -> DecoderParams {
    init_params(&small_config(layer_count), seed).unwrap()
}

/// Every parameter drawn uniformly from `[-scale, scale]`.
pub fn uniform_params(config: DecoderConfig, scale: f64, seed: u64) -> DecoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = DecoderParams::zeros(config).unwrap().len();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    DecoderParams::from_flat(config, data).unwrap()
}

pub fn probe_prompts(pairs: usize, seed: u64) -> Dataset {
    generate_fine_task(&small_schema(), pairs, 5, seed).unwrap()
}
