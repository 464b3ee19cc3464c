// SPDX-License-Identifier: MIT OR Apache-2.0

//! Paired fine and coarse benchmarks plus a yes-biased training set.
//!
//! ```text
//! cargo run --example generate_benchmarks -- [out_dir]
//! ```

use modality_lab::benchgen::{
    check_label, generate_coarse_task, generate_fine_task, generate_training_set, save_dataset, Dataset, TrainingSetSpec,
    VocabSchema,
};

fn describe(name: &str, data: &Dataset) {
    println!(
        "{name:<6} {} prompts, yes fraction {:.3}, first prompt {:?} -> {}",
        data.len(),
        data.empirical_yes_fraction(),
        data.prompts[0].tokens,
        data.prompts[0].label
    );
}

fn main() -> modality_lab::Result<()> {
    let schema = VocabSchema::default();
    let fine = generate_fine_task(&schema, 100, 5, 1)?;
    let coarse = generate_coarse_task(&schema, 100, 5, 2)?;
    let train = generate_training_set(&schema, &TrainingSetSpec::default(), 3)?;
    describe("fine", &fine);
    describe("coarse", &coarse);
    describe("train", &train);

    for data in [&fine, &coarse, &train] {
        for p in &data.prompts {
            assert_eq!(check_label(&schema, p)?, p.label);
        }
    }
    println!("every label re-derived from raw tokens");

    let pair = &fine.pairs()?[0];
    println!("minimal pair: yes {:?} / no {:?}", pair.yes.text_tokens(), pair.no.text_tokens());

    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir).map_err(|e| modality_lab::Error::Io { path: dir.clone().into(), source: e })?;
        for (name, data) in [("fine", &fine), ("coarse", &coarse), ("train", &train)] {
            let path = std::path::Path::new(&dir).join(format!("{name}.tsv"));
            save_dataset(data, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
