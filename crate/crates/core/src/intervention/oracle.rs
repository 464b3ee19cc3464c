// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-by-token reference allocation for redistribution.
//!
//! Deliberately avoids the span arithmetic and the closed-form gain factor
//! used in [`rows`](super::rows): membership is looked up per token and the
//! removed mass is handed out one recipient token at a time.

use crate::error::{Error, Result};
use crate::modality::{Modality, ModalityLayout};

use super::rows::{check_fraction, check_row, MASS_EPSILON};

/// Reference implementation of proportional and pairwise redistribution.
///
/// `recipients` is the set of modalities receiving the removed mass; pass the
/// two non-source modalities for proportional redistribution or a single one
/// for a pairwise transfer.
pub fn brute_force_redistribute(
    row: &[f64],
    layout: &ModalityLayout,
    source: Modality,
    recipients: &[Modality],
    fraction: f64,
) -> Result<Vec<f64>> {
    check_row(row, layout)?;
    check_fraction(fraction)?;
    if recipients.contains(&source) {
        return Err(Error::InvalidSpec("source listed among recipients".into()));
    }

    let membership: Vec<Modality> = (0..row.len())
        .map(|i| layout.modality_of(i))
        .collect::<Result<_>>()?;

    let mut out = row.to_vec();
    let mut source_mass = 0.0;
    let mut recipient_mass = 0.0;
    for (i, &w) in row.iter().enumerate() {
        if membership[i] == source {
            source_mass += w;
        } else if recipients.contains(&membership[i]) {
            recipient_mass += w;
        }
    }
    if fraction == 0.0 || source_mass < MASS_EPSILON || recipient_mass < MASS_EPSILON {
        return Ok(out);
    }

    let mut removed = 0.0;
    for (i, w) in out.iter_mut().enumerate() {
        if membership[i] == source {
            let take = fraction * *w;
            *w -= take;
            removed += take;
        }
    }
    for (i, w) in out.iter_mut().enumerate() {
        if recipients.contains(&membership[i]) {
            let share = row[i] / recipient_mass;
            *w += removed * share;
        }
    }
    Ok(out)
}
