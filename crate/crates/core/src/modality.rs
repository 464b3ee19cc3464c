// SPDX-License-Identifier: MIT OR Apache-2.0

//! Three-way partition of a prompt into system, image and text tokens.
//!
//! Prompts follow a fixed template: every token before the image is system
//! content (including BOS), then the projected image tokens, then the user
//! query. [`modality_mass`] measures how much post-softmax attention a set of
//! rows assigns to each of the three spans.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{AttentionTensor, LayerScope};

/// Input modality of a prompt token. Ordered by template position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    System,
    Image,
    Text,
}

impl Modality {
    /// All modalities in template order.
    pub const ALL: [Modality; 3] = [Modality::System, Modality::Image, Modality::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::System => "system",
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }

    /// The two modalities other than `self`, in template order.
    pub fn others(self) -> [Modality; 2] {
        match self {
            Modality::System => [Modality::Image, Modality::Text],
            Modality::Image => [Modality::System, Modality::Text],
            Modality::Text => [Modality::System, Modality::Image],
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "system" => Ok(Modality::System),
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// Contiguous system, image and text spans covering `[0, prompt_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalityLayout {
    system_len: usize,
    image_len: usize,
    text_len: usize,
}

impl ModalityLayout {
    /// Builds a layout from span lengths. Every span must be non-empty.
    pub fn new(system_len: usize, image_len: usize, text_len: usize) -> Result<Self> {
        if system_len == 0 || image_len == 0 || text_len == 0 {
            return Err(Error::InvalidLayout(format!(
                "span lengths must be >= 1, got ({system_len}, {image_len}, {text_len})"
            )));
        }
        Ok(Self {
            system_len,
            image_len,
            text_len,
        })
    }

    pub fn system_len(&self) -> usize {
        self.system_len
    }

    pub fn image_len(&self) -> usize {
        self.image_len
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn prompt_len(&self) -> usize {
        self.system_len + self.image_len + self.text_len
    }

    /// Span lengths in template order.
    pub fn lens(&self) -> [usize; 3] {
        [self.system_len, self.image_len, self.text_len]
    }

    pub fn span(&self, modality: Modality) -> Range<usize> {
        let image_start = self.system_len;
        let text_start = image_start + self.image_len;
        match modality {
            Modality::System => 0..image_start,
            Modality::Image => image_start..text_start,
            Modality::Text => text_start..self.prompt_len(),
        }
    }

    /// Modality whose span contains `index`.
    pub fn modality_of(&self, index: usize) -> Result<Modality> {
        if index >= self.prompt_len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.prompt_len(),
            });
        }
        Ok(if index < self.system_len {
            Modality::System
        } else if index < self.system_len + self.image_len {
            Modality::Image
        } else {
            Modality::Text
        })
    }

    /// Sum of `row` over the tokens of `modality`.
    pub fn row_mass(&self, row: &[f64], modality: Modality) -> f64 {
        row[self.span(modality)].iter().sum()
    }
}

/// Fraction of attention assigned to each modality.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModalityMass {
    pub system: f64,
    pub image: f64,
    pub text: f64,
}

impl ModalityMass {
    pub fn get(&self, modality: Modality) -> f64 {
        match modality {
            Modality::System => self.system,
            Modality::Image => self.image,
            Modality::Text => self.text,
        }
    }

    pub fn total(&self) -> f64 {
        self.system + self.image + self.text
    }

    /// Per-modality masses of a single attention row.
    pub fn of_row(row: &[f64], layout: &ModalityLayout) -> Self {
        Self {
            system: layout.row_mass(row, Modality::System),
            image: layout.row_mass(row, Modality::Image),
            text: layout.row_mass(row, Modality::Text),
        }
    }
}

/// Mean per-row modality mass over every in-scope `(layer, head, query)` row.
///
/// Query rows inside the system or image spans are included; the modalities
/// hidden from them by the causal mask simply contribute zero.
pub fn modality_mass(
    attn: &AttentionTensor,
    layout: &ModalityLayout,
    scope: &LayerScope,
) -> Result<ModalityMass> {
    if attn.key_count() != layout.prompt_len() {
        return Err(Error::Shape(format!(
            "attention covers {} keys but layout has {} tokens",
            attn.key_count(),
            layout.prompt_len()
        )));
    }
    let cells = scope.resolve(attn.layer_count(), attn.head_count())?;
    let rows = cells.len() * attn.query_count();
    if rows == 0 {
        return Err(Error::EmptyScope);
    }
    let mut sum = ModalityMass::default();
    for &(layer, head) in &cells {
        for query in 0..attn.query_count() {
            let m = ModalityMass::of_row(attn.row(layer, head, query), layout);
            sum.system += m.system;
            sum.image += m.image;
            sum.text += m.text;
        }
    }
    let n = rows as f64;
    Ok(ModalityMass {
        system: sum.system / n,
        image: sum.image / n,
        text: sum.text / n,
    })
}
