// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which decoder layers an intervention touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSelector {
    /// One of four equal contiguous blocks of layers, `1..=4`.
    Quarter(u8),
    /// Zero-based half-open layer range `lo..hi`.
    Range { lo: usize, hi: usize },
    Global,
}

/// Which heads within the selected layers an intervention touches.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum HeadSet {
    #[default]
    All,
    Explicit(Vec<usize>),
}

/// Layer selector plus head filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerScope {
    pub layers: LayerSelector,
    pub heads: HeadSet,
}

impl LayerScope {
    pub fn global() -> Self {
        Self {
            layers: LayerSelector::Global,
            heads: HeadSet::All,
        }
    }

    pub fn quarter(q: u8) -> Self {
        Self {
            layers: LayerSelector::Quarter(q),
            heads: HeadSet::All,
        }
    }

    pub fn range(lo: usize, hi: usize) -> Self {
        Self {
            layers: LayerSelector::Range { lo, hi },
            heads: HeadSet::All,
        }
    }

    pub fn with_heads(mut self, heads: Vec<usize>) -> Self {
        self.heads = HeadSet::Explicit(heads);
        self
    }

    /// Zero-based layer range selected for a model with `layer_count` layers.
    pub fn layer_range(&self, layer_count: usize) -> Result<Range<usize>> {
        match self.layers {
            LayerSelector::Global => Ok(0..layer_count),
            LayerSelector::Quarter(q) => {
                if !(1..=4).contains(&q) {
                    return Err(Error::InvalidScope(format!("quarter must be 1..=4, got {q}")));
                }
                if layer_count == 0 || layer_count % 4 != 0 {
                    return Err(Error::InvalidScope(format!(
                        "quarter scoping needs a layer count divisible by 4, got {layer_count}"
                    )));
                }
                let width = layer_count / 4;
                let q = usize::from(q);
                Ok((q - 1) * width..q * width)
            }
            LayerSelector::Range { lo, hi } => {
                if lo >= hi || hi > layer_count {
                    return Err(Error::InvalidScope(format!(
                        "layer range {lo}..{hi} invalid for {layer_count} layers"
                    )));
                }
                Ok(lo..hi)
            }
        }
    }

    /// Expands the scope into `(layer, head)` cells in layer-major order.
    pub fn resolve(&self, layer_count: usize, head_count: usize) -> Result<Vec<(usize, usize)>> {
        let layers = self.layer_range(layer_count)?;
        let heads: Vec<usize> = match &self.heads {
            HeadSet::All => (0..head_count).collect(),
            HeadSet::Explicit(list) => {
                let mut sorted = list.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != list.len() {
                    return Err(Error::InvalidScope("duplicate head index".into()));
                }
                if let Some(&bad) = sorted.iter().find(|&&h| h >= head_count) {
                    return Err(Error::InvalidScope(format!(
                        "head {bad} out of range for {head_count} heads"
                    )));
                }
                sorted
            }
        };
        Ok(layers
            .flat_map(|l| heads.iter().map(move |&h| (l, h)))
            .collect())
    }

    /// Cheap membership test without allocating the cell list. Assumes the
    /// scope has already been validated with [`LayerScope::resolve`].
    pub(crate) fn contains(&self, layer_range: &Range<usize>, layer: usize, head: usize) -> bool {
        layer_range.contains(&layer)
            && match &self.heads {
                HeadSet::All => true,
                HeadSet::Explicit(list) => list.contains(&head),
            }
    }
}

/// Free-function form of [`LayerScope::resolve`].
pub fn resolve_scope(
    scope: &LayerScope,
    layer_count: usize,
    head_count: usize,
) -> Result<Vec<(usize, usize)>> {
    scope.resolve(layer_count, head_count)
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelector::Quarter(q) => write!(f, "q{q}"),
            LayerSelector::Range { lo, hi } => write!(f, "layers:{lo}..{hi}"),
            LayerSelector::Global => f.write_str("global"),
        }
    }
}

impl FromStr for LayerSelector {
    type Err = Error;

    /// Accepts `q1`..`q4`, `global`, or `layers:LO..HI`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "global" {
            return Ok(LayerSelector::Global);
        }
        if let Some(q) = s.strip_prefix('q') {
            return match q.parse::<u8>() {
                Ok(q @ 1..=4) => Ok(LayerSelector::Quarter(q)),
                _ => Err(Error::Config(format!("bad quarter `{s}`"))),
            };
        }
        if let Some(range) = s.strip_prefix("layers:") {
            let parsed = range
                .split_once("..")
                .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
            return match parsed {
                Some((lo, hi)) => Ok(LayerSelector::Range { lo, hi }),
                None => Err(Error::Config(format!("bad layer range `{s}`"))),
            };
        }
        Err(Error::Config(format!(
            "unknown scope `{s}` (expected q1..q4, global or layers:LO..HI)"
        )))
    }
}

impl fmt::Display for LayerScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.layers)?;
        if let HeadSet::Explicit(heads) = &self.heads {
            let list: Vec<String> = heads.iter().map(ToString::to_string).collect();
            write!(f, " heads[{}]", list.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers_of(cells: &[(usize, usize)]) -> Vec<usize> {
        let mut layers: Vec<usize> = cells.iter().map(|c| c.0).collect();
        layers.dedup();
        layers
    }

    #[test]
    fn fourth_quarter_of_32_layers() {
        let cells = LayerScope::quarter(4).resolve(32, 1).unwrap();
        assert_eq!(layers_of(&cells), (24..32).collect::<Vec<_>>());
    }

    #[test]
    fn first_quarter_of_8_layers() {
        let cells = LayerScope::quarter(1).resolve(8, 2).unwrap();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn indivisible_layer_count() {
        assert!(matches!(
            LayerScope::quarter(2).resolve(6, 1),
            Err(Error::InvalidScope(_))
        ));
        assert!(LayerScope::quarter(5).resolve(8, 1).is_err());
    }

    #[test]
    fn ranges_and_heads() {
        let cells = LayerScope::range(1, 3).with_heads(vec![2, 0]).resolve(4, 4).unwrap();
        assert_eq!(cells, vec![(1, 0), (1, 2), (2, 0), (2, 2)]);
        assert!(LayerScope::range(3, 3).resolve(4, 1).is_err());
        assert!(LayerScope::range(0, 5).resolve(4, 1).is_err());
        assert!(LayerScope::global().with_heads(vec![4]).resolve(4, 4).is_err());
        assert!(LayerScope::global().with_heads(vec![1, 1]).resolve(4, 4).is_err());
    }

    #[test]
    fn selector_text_round_trip() {
        for sel in [
            LayerSelector::Quarter(3),
            LayerSelector::Global,
            LayerSelector::Range { lo: 2, hi: 6 },
        ] {
            assert_eq!(sel.to_string().parse::<LayerSelector>().unwrap(), sel);
        }
        assert!("q0".parse::<LayerSelector>().is_err());
        assert!("layers:2".parse::<LayerSelector>().is_err());
    }
}
