// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy decoder end to end: forward with and without an intervention,
//! constrained yes/no decoding and a checkpoint round trip.
//!
//! ```text
//! cargo run --release --example toy_decoder
//! ```

use modality_lab::benchgen::{generate_fine_task, VocabSchema};
use modality_lab::decoder::{self, decode_checkpoint, encode_checkpoint};
use modality_lab::trainer::init_params;
use modality_lab::{InterventionSpec, LayerScope, Modality};

fn main() -> modality_lab::Result<()> {
    let schema = VocabSchema::default();
    let config = schema.decoder_config(8, 4, 64, 128, 32);
    let params = init_params(&config, 7)?;
    println!("{} parameters, checksum {}", params.len(), &params.checksum()[..16]);

    let prompt = &generate_fine_task(&schema, 1, 5, 3)?.prompts[0];
    let specs = [
        ("none", InterventionSpec::none()),
        ("q4 system redistribution", InterventionSpec::proportional(Modality::System, 1.0, LayerScope::quarter(4))),
        ("q4 system ablation", InterventionSpec::ablation(Modality::System, LayerScope::quarter(4))),
        ("pai", InterventionSpec::pai(0.5, 1.5, LayerScope::global())),
    ];
    let (yes, no) = (config.yes_token_id as usize, config.no_token_id as usize);
    for (label, spec) in &specs {
        let out = decoder::forward(&params, &prompt.tokens, &prompt.layout, spec, false)?;
        println!(
            "{label:<26} yes {:+.4}  no {:+.4}  -> {}  ({} rows rewritten)",
            out.logits[yes],
            out.logits[no],
            decoder::answer(&out, &config),
            out.rewrite_stats.rows_modified
        );
    }

    let bytes = encode_checkpoint(&params);
    let back = decode_checkpoint(&bytes)?;
    println!("checkpoint: {} bytes, round trip exact: {}", bytes.len(), encode_checkpoint(&back) == bytes);
    Ok(())
}
