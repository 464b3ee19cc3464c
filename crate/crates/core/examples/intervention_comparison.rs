// SPDX-License-Identifier: MIT OR Apache-2.0

//! Every intervention against the no-intervention baseline on fine and
//! coarse paired benchmarks, rendered as a comparison table.
//!
//! ```text
//! cargo run --release --example intervention_comparison -- [config.toml]
//! ```
//!
//! Defaults to `configs/compare.toml` next to this crate.

use modality_lab::harness::{run_experiment, ExperimentConfig};

fn main() -> modality_lab::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/compare.toml").to_string());
    let config = ExperimentConfig::load(&path)?;
    let report = run_experiment(&config)?;
    print!("{}", report.render());

    let fine = &report.datasets[0];
    let base = fine.baseline().metrics;
    for cell in &fine.cells[1..] {
        let closer = cell.metrics.yes_bias() < base.yes_bias();
        println!("{:<16} yes-rate {:.4} ({})", cell.intervention, cell.metrics.yes_rate, if closer { "less biased" } else { "not less biased" });
    }
    Ok(())
}
