// SPDX-License-Identifier: MIT OR Apache-2.0

//! How much attention each modality receives, per layer quarter.
//!
//! Builds a prompt from the synthetic benchmark, runs a freshly initialised
//! decoder with attention capture and prints the mean system / image / text
//! mass for each quarter of the layer stack.
//!
//! ```text
//! cargo run --release --example modality_masses
//! ```

use modality_lab::benchgen::{generate_fine_task, VocabSchema};
use modality_lab::decoder::capture_attention;
use modality_lab::modality::modality_mass;
use modality_lab::trainer::init_params;
use modality_lab::{LayerScope, Modality};

fn main() -> modality_lab::Result<()> {
    let schema = VocabSchema::default();
    let config = schema.decoder_config(8, 4, 64, 128, 32);
    let params = init_params(&config, 0)?;
    let data = generate_fine_task(&schema, 1, 5, 0)?;
    let prompt = &data.prompts[0];

    println!("layout: {:?} (system, image, text)", prompt.layout.lens());
    for (i, &tok) in prompt.tokens.iter().enumerate() {
        print!("{tok}:{} ", &prompt.layout.modality_of(i)?.as_str()[..1]);
    }
    println!();

    let attn = capture_attention(&params, &prompt.tokens, &prompt.layout)?;
    println!("\nquarter  system  image   text");
    for q in 1..=4 {
        let m = modality_mass(&attn, &prompt.layout, &LayerScope::quarter(q))?;
        println!("Q{q}       {:.4}  {:.4}  {:.4}", m.system, m.image, m.text);
    }

    // Only the last row (the answer position) sees every modality.
    let last = attn.query_count() - 1;
    let row = attn.row(7, 0, last);
    println!("\nlayer 7, head 0, final row:");
    for m in Modality::ALL {
        println!("  {m:<6} {:.4}", prompt.layout.row_mass(row, m));
    }
    Ok(())
}
