// SPDX-License-Identifier: MIT OR Apache-2.0

//! Writes pre-intervention attention for a dataset to disk, reloads it and
//! recomputes per-quarter modality masses offline.
//!
//! ```text
//! cargo run --release --example attention_dump -- [out.attn]
//! ```

use modality_lab::benchgen::{generate_fine_task, VocabSchema};
use modality_lab::harness::{dump_attention, load_attention};
use modality_lab::intervention::apply_spec;
use modality_lab::modality::modality_mass;
use modality_lab::trainer::init_params;
use modality_lab::{InterventionSpec, LayerScope, Modality};

fn main() -> modality_lab::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir().join("modality-lab-example.attn").to_string_lossy().into_owned()
    });
    let schema = VocabSchema::default();
    let params = init_params(&schema.decoder_config(8, 4, 64, 128, 32), 0)?;
    let data = generate_fine_task(&schema, 10, 5, 0)?;
    let n = dump_attention(&params, &data, &path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("wrote {n} records ({size} bytes) to {path}");

    let records = load_attention(&path)?;
    let spec = InterventionSpec::proportional(Modality::System, 1.0, LayerScope::quarter(4));
    println!("quarter  system (before)  system (after Q4 redistribution)");
    for q in 1..=4 {
        let scope = LayerScope::quarter(q);
        let (mut before, mut after) = (0.0, 0.0);
        for r in &records {
            before += modality_mass(&r.attention, &r.layout, &scope)?.system;
            let (rewritten, _) = apply_spec(&r.attention, &r.layout, &spec)?;
            after += modality_mass(&rewritten, &r.layout, &scope)?.system;
        }
        let k = records.len() as f64;
        println!("Q{q}       {:.4}           {:.4}", before / k, after / k);
    }
    Ok(())
}
