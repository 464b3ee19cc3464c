// SPDX-License-Identifier: MIT OR Apache-2.0

//! Modality-level rewrites of post-softmax attention.
//!
//! An [`InterventionSpec`] pairs an [`InterventionKind`] with a
//! [`LayerScope`]. The decoder applies it row by row inside the forward pass;
//! [`apply_spec`] does the same to a captured [`AttentionTensor`] for offline
//! analysis.

mod oracle;
mod rows;
mod scope;
mod tensor;

use std::fmt;
use std::ops::AddAssign;

pub use oracle::brute_force_redistribute;
pub use rows::{
    ablate, adhh, pai_logit_fusion, redistribute_pairwise, redistribute_proportional, scale,
    RowOutcome, MASS_EPSILON,
};
pub use scope::{resolve_scope, HeadSet, LayerScope, LayerSelector};
pub use tensor::AttentionTensor;

use crate::error::{Error, Result};
use crate::modality::{Modality, ModalityLayout};

/// Default AD-HH text-mass threshold.
pub const DEFAULT_ADHH_THRESHOLD: f64 = 0.40;
/// Default PAI contrastive weight.
pub const DEFAULT_PAI_ALPHA: f64 = 0.5;
/// Default PAI pre-softmax image score multiplier.
pub const DEFAULT_PAI_IMAGE_SCALE: f64 = 1.5;
/// PAI's gamma. Carried through configs, not used by any computation.
pub const DEFAULT_PAI_GAMMA: f64 = 1.1;
/// Image×2.0 baseline factor.
pub const DEFAULT_SCALE_FACTOR: f64 = 2.0;

/// What an intervention does to each in-scope row.
#[derive(Debug, Clone, PartialEq)]
pub enum InterventionKind {
    None,
    Proportional {
        source: Modality,
        fraction: f64,
    },
    Pairwise {
        source: Modality,
        recipient: Modality,
        fraction: f64,
    },
    Ablation {
        source: Modality,
    },
    Scale {
        target: Modality,
        factor: f64,
    },
    AdHh {
        threshold: f64,
    },
    Pai {
        alpha: f64,
        image_scale: f64,
        gamma: f64,
    },
}

impl InterventionKind {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionKind::None => "none",
            InterventionKind::Proportional { .. } => "proportional",
            InterventionKind::Pairwise { .. } => "pairwise",
            InterventionKind::Ablation { .. } => "ablation",
            InterventionKind::Scale { .. } => "scale",
            InterventionKind::AdHh { .. } => "adhh",
            InterventionKind::Pai { .. } => "pai",
        }
    }

    pub fn pai_defaults() -> Self {
        InterventionKind::Pai {
            alpha: DEFAULT_PAI_ALPHA,
            image_scale: DEFAULT_PAI_IMAGE_SCALE,
            gamma: DEFAULT_PAI_GAMMA,
        }
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterventionKind::None => f.write_str("none"),
            InterventionKind::Proportional { source, fraction } => {
                write!(f, "proportional({source}, p={fraction})")
            }
            InterventionKind::Pairwise {
                source,
                recipient,
                fraction,
            } => write!(f, "pairwise({source}->{recipient}, p={fraction})"),
            InterventionKind::Ablation { source } => write!(f, "ablation({source})"),
            InterventionKind::Scale { target, factor } => write!(f, "scale({target}x{factor})"),
            InterventionKind::AdHh { threshold } => write!(f, "adhh(>{threshold})"),
            InterventionKind::Pai {
                alpha, image_scale, ..
            } => write!(f, "pai(alpha={alpha}, image x{image_scale})"),
        }
    }
}

/// One intervention: a kind plus where it applies.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub scope: LayerScope,
}

impl InterventionSpec {
    pub fn new(kind: InterventionKind, scope: LayerScope) -> Self {
        Self { kind, scope }
    }

    /// The no-intervention baseline.
    pub fn none() -> Self {
        Self::new(InterventionKind::None, LayerScope::global())
    }

    pub fn proportional(source: Modality, fraction: f64, scope: LayerScope) -> Self {
        Self::new(InterventionKind::Proportional { source, fraction }, scope)
    }

    pub fn pairwise(source: Modality, recipient: Modality, fraction: f64, scope: LayerScope) -> Self {
        Self::new(
            InterventionKind::Pairwise {
                source,
                recipient,
                fraction,
            },
            scope,
        )
    }

    pub fn ablation(source: Modality, scope: LayerScope) -> Self {
        Self::new(InterventionKind::Ablation { source }, scope)
    }

    pub fn scale(target: Modality, factor: f64, scope: LayerScope) -> Self {
        Self::new(InterventionKind::Scale { target, factor }, scope)
    }

    pub fn adhh(threshold: f64, scope: LayerScope) -> Self {
        Self::new(InterventionKind::AdHh { threshold }, scope)
    }

    pub fn pai(alpha: f64, image_scale: f64, scope: LayerScope) -> Self {
        Self::new(
            InterventionKind::Pai {
                alpha,
                image_scale,
                gamma: DEFAULT_PAI_GAMMA,
            },
            scope,
        )
    }

    /// Checks parameter ranges. Scope validity depends on the model and is
    /// checked by [`LayerScope::resolve`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self.kind {
            InterventionKind::None => Ok(()),
            InterventionKind::Proportional { fraction, .. } => rows::check_fraction(fraction),
            InterventionKind::Pairwise {
                source,
                recipient,
                fraction,
            } => {
                if source == recipient {
                    return bad(format!("recipient must differ from source ({source})"));
                }
                rows::check_fraction(fraction)
            }
            InterventionKind::Ablation { .. } => Ok(()),
            InterventionKind::Scale { factor, .. } => {
                if factor > 0.0 && factor.is_finite() {
                    Ok(())
                } else {
                    bad(format!("scale factor {factor} must be positive"))
                }
            }
            InterventionKind::AdHh { threshold } => {
                if threshold > 0.0 && threshold < 1.0 {
                    Ok(())
                } else {
                    bad(format!("AD-HH threshold {threshold} outside (0, 1)"))
                }
            }
            InterventionKind::Pai {
                alpha, image_scale, ..
            } => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return bad(format!("PAI alpha {alpha} must be >= 0"));
                }
                if !(image_scale > 0.0 && image_scale.is_finite()) {
                    return bad(format!("PAI image scale {image_scale} must be positive"));
                }
                Ok(())
            }
        }
    }

    /// True if the kind acts on post-softmax rows (everything but None and PAI).
    pub fn rewrites_rows(&self) -> bool {
        !matches!(self.kind, InterventionKind::None | InterventionKind::Pai { .. })
    }

    /// Applies this spec's row rule to one post-softmax row. PAI and None
    /// leave rows alone.
    pub fn rewrite_row(&self, row: &mut [f64], layout: &ModalityLayout) -> Result<RowOutcome> {
        match self.kind {
            InterventionKind::None | InterventionKind::Pai { .. } => Ok(RowOutcome::Unchanged),
            InterventionKind::Proportional { source, fraction } => {
                redistribute_proportional(row, layout, source, fraction)
            }
            InterventionKind::Pairwise {
                source,
                recipient,
                fraction,
            } => redistribute_pairwise(row, layout, source, recipient, fraction),
            InterventionKind::Ablation { source } => ablate(row, layout, source),
            InterventionKind::Scale { target, factor } => scale(row, layout, target, factor),
            InterventionKind::AdHh { threshold } => adhh(row, layout, threshold),
        }
    }
}

/// Row counters accumulated while applying an intervention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RowRewriteStats {
    pub rows_modified: u64,
    pub rows_skipped_zero_recipient: u64,
    pub rows_skipped_zero_source: u64,
}

impl RowRewriteStats {
    pub fn record(&mut self, outcome: RowOutcome) {
        match outcome {
            RowOutcome::Modified => self.rows_modified += 1,
            RowOutcome::SkippedZeroRecipient => self.rows_skipped_zero_recipient += 1,
            RowOutcome::SkippedZeroSource => self.rows_skipped_zero_source += 1,
            RowOutcome::Unchanged => {}
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

impl AddAssign for RowRewriteStats {
    fn add_assign(&mut self, rhs: Self) {
        self.rows_modified += rhs.rows_modified;
        self.rows_skipped_zero_recipient += rhs.rows_skipped_zero_recipient;
        self.rows_skipped_zero_source += rhs.rows_skipped_zero_source;
    }
}

/// Applies `spec` to every in-scope row of a captured tensor.
///
/// Out-of-scope rows are copied bit-for-bit. PAI is rejected: it acts on
/// pre-softmax scores and output logits, which a post-softmax tensor does
/// not carry.
pub fn apply_spec(
    attn: &AttentionTensor,
    layout: &ModalityLayout,
    spec: &InterventionSpec,
) -> Result<(AttentionTensor, RowRewriteStats)> {
    spec.validate()?;
    if attn.key_count() != layout.prompt_len() {
        return Err(Error::Shape(format!(
            "attention covers {} keys but layout has {} tokens",
            attn.key_count(),
            layout.prompt_len()
        )));
    }
    let mut out = attn.clone();
    let mut stats = RowRewriteStats::default();
    match spec.kind {
        InterventionKind::None => return Ok((out, stats)),
        InterventionKind::Pai { .. } => {
            return Err(Error::InvalidSpec(
                "PAI needs pre-softmax scores; run it through the decoder".into(),
            ))
        }
        _ => {}
    }
    for (layer, head) in spec.scope.resolve(attn.layer_count(), attn.head_count())? {
        for query in 0..attn.query_count() {
            stats.record(spec.rewrite_row(out.row_mut(layer, head, query), layout)?);
        }
    }
    Ok((out, stats))
}
