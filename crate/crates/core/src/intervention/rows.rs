// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form rewrites of a single post-softmax attention row.
//!
//! Every function mutates `row` in place and reports what happened so callers
//! can accumulate [`RowRewriteStats`](super::RowRewriteStats). A row whose
//! source or recipient mass is below [`MASS_EPSILON`] is left untouched.

use crate::error::{Error, Result};
use crate::modality::{Modality, ModalityLayout};

/// Mass below which a modality counts as carrying no attention.
pub const MASS_EPSILON: f64 = 1e-12;

/// What a row rewrite did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOutcome {
    Modified,
    /// Rule did not fire (e.g. AD-HH below threshold, zero fraction).
    Unchanged,
    SkippedZeroSource,
    SkippedZeroRecipient,
}

pub(crate) fn check_row(row: &[f64], layout: &ModalityLayout) -> Result<()> {
    if row.len() != layout.prompt_len() {
        return Err(Error::Shape(format!(
            "row has {} keys, layout has {} tokens",
            row.len(),
            layout.prompt_len()
        )));
    }
    Ok(())
}

pub(crate) fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidSpec(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

/// Moves `fraction` of the source modality's mass onto `recipients`, split in
/// proportion to the recipients' current token weights.
fn transfer(
    row: &mut [f64],
    layout: &ModalityLayout,
    source: Modality,
    recipients: &[Modality],
    fraction: f64,
) -> Result<RowOutcome> {
    check_row(row, layout)?;
    check_fraction(fraction)?;
    if fraction == 0.0 {
        return Ok(RowOutcome::Unchanged);
    }
    let source_mass = layout.row_mass(row, source);
    if source_mass < MASS_EPSILON {
        return Ok(RowOutcome::SkippedZeroSource);
    }
    let recipient_mass: f64 = recipients.iter().map(|&r| layout.row_mass(row, r)).sum();
    if recipient_mass < MASS_EPSILON {
        return Ok(RowOutcome::SkippedZeroRecipient);
    }

    let keep = 1.0 - fraction;
    let gain = 1.0 + fraction * source_mass / recipient_mass;
    row[layout.span(source)].iter_mut().for_each(|w| *w *= keep);
    for &r in recipients {
        row[layout.span(r)].iter_mut().for_each(|w| *w *= gain);
    }
    Ok(RowOutcome::Modified)
}

/// Proportional redistribution: the source loses `fraction` of its weight and
/// both other modalities gain it in proportion to their existing weights.
///
/// With `fraction == 1` the source is zeroed and every recipient token `w`
/// becomes `w / (1 - alpha_source)`.
pub fn redistribute_proportional(
    row: &mut [f64],
    layout: &ModalityLayout,
    source: Modality,
    fraction: f64,
) -> Result<RowOutcome> {
    transfer(row, layout, source, &source.others(), fraction)
}

/// Pairwise transfer: all removed source weight goes to `recipient`; the
/// third modality is not touched.
pub fn redistribute_pairwise(
    row: &mut [f64],
    layout: &ModalityLayout,
    source: Modality,
    recipient: Modality,
    fraction: f64,
) -> Result<RowOutcome> {
    if source == recipient {
        return Err(Error::InvalidSpec(format!(
            "recipient must differ from source ({source})"
        )));
    }
    transfer(row, layout, source, &[recipient], fraction)
}

/// Zeroes the source modality without renormalising. The row is left summing
/// to `1 - alpha_source`.
pub fn ablate(row: &mut [f64], layout: &ModalityLayout, source: Modality) -> Result<RowOutcome> {
    check_row(row, layout)?;
    if layout.row_mass(row, source) < MASS_EPSILON {
        return Ok(RowOutcome::SkippedZeroSource);
    }
    row[layout.span(source)].iter_mut().for_each(|w| *w = 0.0);
    Ok(RowOutcome::Modified)
}

/// Multiplies the target modality's weights by `factor`, no renormalisation.
pub fn scale(row: &mut [f64], layout: &ModalityLayout, target: Modality, factor: f64) -> Result<RowOutcome> {
    check_row(row, layout)?;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidSpec(format!("scale factor {factor} must be positive")));
    }
    if layout.row_mass(row, target) < MASS_EPSILON {
        return Ok(RowOutcome::SkippedZeroRecipient);
    }
    if factor == 1.0 {
        return Ok(RowOutcome::Unchanged);
    }
    row[layout.span(target)].iter_mut().for_each(|w| *w *= factor);
    Ok(RowOutcome::Modified)
}

/// AD-HH rule: zero the text weights when the row's text mass strictly
/// exceeds `threshold`; otherwise leave the row alone.
pub fn adhh(row: &mut [f64], layout: &ModalityLayout, threshold: f64) -> Result<RowOutcome> {
    check_row(row, layout)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidSpec(format!("AD-HH threshold {threshold} outside (0, 1)")));
    }
    let text_mass = layout.row_mass(row, Modality::Text);
    if text_mass < MASS_EPSILON {
        return Ok(RowOutcome::SkippedZeroSource);
    }
    if text_mass > threshold {
        row[layout.span(Modality::Text)].iter_mut().for_each(|w| *w = 0.0);
        Ok(RowOutcome::Modified)
    } else {
        Ok(RowOutcome::Unchanged)
    }
}

/// PAI contrastive fusion: `(1 + alpha) * multimodal - alpha * unimodal`.
pub fn pai_logit_fusion(multimodal: &[f64], unimodal: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if multimodal.len() != unimodal.len() {
        return Err(Error::Shape(format!(
            "logit vectors differ in length: {} vs {}",
            multimodal.len(),
            unimodal.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidSpec(format!("PAI alpha {alpha} must be >= 0")));
    }
    if alpha == 0.0 {
        return Ok(multimodal.to_vec());
    }
    Ok(multimodal
        .iter()
        .zip(unimodal)
        .map(|(&m, &u)| (1.0 + alpha) * m - alpha * u)
        .collect())
}
