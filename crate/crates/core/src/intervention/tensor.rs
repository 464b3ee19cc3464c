// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

/// Post-softmax attention weights indexed `[layer][head][query][key]`,
/// stored row-major in one buffer.
///
/// Query rows are the *last* `query_count` prompt positions, so with
/// `query_count == key_count` the causal mask is the usual upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layer_count: usize,
    head_count: usize,
    query_count: usize,
    key_count: usize,
    weights: Vec<f64>,
}

impl AttentionTensor {
    pub fn zeros(layer_count: usize, head_count: usize, query_count: usize, key_count: usize) -> Self {
        Self {
            layer_count,
            head_count,
            query_count,
            key_count,
            weights: vec![0.0; layer_count * head_count * query_count * key_count],
        }
    }

    /// Wraps a row-major buffer. Only the length is checked here; use
    /// [`AttentionTensor::validate`] for the stochastic and causal invariants.
    pub fn from_weights(
        layer_count: usize,
        head_count: usize,
        query_count: usize,
        key_count: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let expected = layer_count * head_count * query_count * key_count;
        if weights.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} weights for [{layer_count}, {head_count}, {query_count}, {key_count}], got {}",
                weights.len()
            )));
        }
        if query_count > key_count {
            return Err(Error::Shape(format!(
                "{query_count} query rows cannot exceed {key_count} keys"
            )));
        }
        Ok(Self {
            layer_count,
            head_count,
            query_count,
            key_count,
            weights,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn query_count(&self) -> usize {
        self.query_count
    }

    pub fn key_count(&self) -> usize {
        self.key_count
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.layer_count, self.head_count, self.query_count, self.key_count]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    fn offset(&self, layer: usize, head: usize, query: usize) -> usize {
        debug_assert!(layer < self.layer_count && head < self.head_count && query < self.query_count);
        ((layer * self.head_count + head) * self.query_count + query) * self.key_count
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let start = self.offset(layer, head, query);
        &self.weights[start..start + self.key_count]
    }

    pub fn row_mut(&mut self, layer: usize, head: usize, query: usize) -> &mut [f64] {
        let start = self.offset(layer, head, query);
        let keys = self.key_count;
        &mut self.weights[start..start + keys]
    }

    /// All `query_count` rows of one `(layer, head)` cell as a contiguous block.
    pub fn head_block(&self, layer: usize, head: usize) -> &[f64] {
        let start = self.offset(layer, head, 0);
        &self.weights[start..start + self.query_count * self.key_count]
    }

    pub fn head_block_mut(&mut self, layer: usize, head: usize) -> &mut [f64] {
        let start = self.offset(layer, head, 0);
        let len = self.query_count * self.key_count;
        &mut self.weights[start..start + len]
    }

    /// Prompt position of query row `query`.
    pub fn query_position(&self, query: usize) -> usize {
        self.key_count - self.query_count + query
    }

    /// Checks non-negativity, the causal mask and row sums within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for layer in 0..self.layer_count {
            for head in 0..self.head_count {
                for query in 0..self.query_count {
                    let pos = self.query_position(query);
                    let row = self.row(layer, head, query);
                    if let Some((k, w)) = row.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
                        return Err(Error::Numerical(format!(
                            "weight {w} at [{layer},{head},{query},{k}] is negative or NaN"
                        )));
                    }
                    if let Some(k) = (pos + 1..self.key_count).find(|&k| row[k] != 0.0) {
                        return Err(Error::Numerical(format!(
                            "causal mask violated at [{layer},{head},{query},{k}]"
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > tol {
                        return Err(Error::Numerical(format!(
                            "row [{layer},{head},{query}] sums to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rounds every weight to the nearest `f32`, the precision used by
    /// attention dump files.
    pub fn round_to_f32(&mut self) {
        for w in &mut self.weights {
            *w = f64::from(*w as f32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_addressed_row_major() {
        let weights: Vec<f64> = (0..2 * 2 * 3 * 3).map(f64::from).collect();
        let t = AttentionTensor::from_weights(2, 2, 3, 3, weights).unwrap();
        assert_eq!(t.row(1, 0, 2), &[24.0, 25.0, 26.0]);
        assert_eq!(t.head_block(0, 1).len(), 9);
        assert!(AttentionTensor::from_weights(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn validate_catches_causal_violation() {
        let ok = AttentionTensor::from_weights(1, 1, 2, 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        ok.validate(1e-9).unwrap();
        let bad = AttentionTensor::from_weights(1, 1, 2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(bad.validate(1e-9).is_err());
        let answer_row = AttentionTensor::from_weights(1, 1, 1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        answer_row.validate(1e-9).unwrap();
    }
}
