// SPDX-License-Identifier: MIT OR Apache-2.0

//! Induces a yes-bias by training on a yes-heavy training set.
//!
//! ```text
//! cargo run --release --example train_biased_model -- [size] [seed] [checkpoint]
//! ```

use modality_lab::benchgen::{generate_fine_task, generate_training_set, TrainingSetSpec, VocabSchema};
use modality_lab::decoder::save_checkpoint;
use modality_lab::trainer::{evaluate_plain, init_params, train, TrainConfig};

fn main() -> modality_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map_or(12_000, |s| s.parse().expect("size"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let schema = VocabSchema::default();
    let config = schema.decoder_config(8, 4, 64, 128, 32);
    let spec = TrainingSetSpec {
        size,
        ..TrainingSetSpec::default()
    };
    let data = generate_training_set(&schema, &spec, seed + 1)?;
    println!("training on {} prompts, {:.0}% yes", data.len(), 100.0 * data.empirical_yes_fraction());

    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (params, report) = train(init_params(&config, seed)?, &data, &tc)?;
    print!("{}", report.to_record());

    let test = generate_fine_task(&schema, 500, spec.image_len, seed + 1000)?;
    let (acc, yes) = evaluate_plain(&params, &test)?;
    println!("balanced test: accuracy {acc:.4}, yes-rate {yes:.4}");

    if let Some(path) = args.next() {
        save_checkpoint(&params, &path)?;
        println!("wrote {path}");
    }
    Ok(())
}
