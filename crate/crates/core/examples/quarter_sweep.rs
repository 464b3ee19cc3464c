// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sweeps system-attention redistribution over the four layer quarters and
//! graduated global fractions.
//!
//! ```text
//! cargo run --release --example quarter_sweep -- [config.toml]
//! ```

use modality_lab::harness::{sweep_quarters, ExperimentConfig};
use modality_lab::Error;

fn main() -> modality_lab::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/sweep.toml").to_string());
    let config = ExperimentConfig::load(&path)?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::Config(format!("{path} has no [sweep] section")))?;
    let report = sweep_quarters(&config, &sweep)?;
    print!("{}", report.render());
    Ok(())
}
