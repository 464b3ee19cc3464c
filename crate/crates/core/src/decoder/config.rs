// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the toy decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub layer_count: usize,
    pub head_count: usize,
    pub model_dim: usize,
    pub feedforward_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub yes_token_id: u32,
    pub no_token_id: u32,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        // Quarter scopes additionally need a multiple of 4; they check that themselves.
        if self.layer_count == 0 {
            return fail("layer_count must be positive".into());
        }
        if self.head_count == 0 || self.model_dim == 0 || self.model_dim % self.head_count != 0 {
            return fail(format!(
                "model_dim {} must be a positive multiple of head_count {}",
                self.model_dim, self.head_count
            ));
        }
        if self.feedforward_dim == 0 || self.max_seq_len == 0 {
            return fail("feedforward_dim and max_seq_len must be positive".into());
        }
        if self.yes_token_id == self.no_token_id {
            return fail("yes and no tokens must differ".into());
        }
        let vocab = self.vocab_size as u64;
        if u64::from(self.yes_token_id) >= vocab || u64::from(self.no_token_id) >= vocab {
            return fail(format!("answer tokens must be < vocab_size {}", self.vocab_size));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.head_count
    }

    #[cfg(test)]
    pub(crate) fn tiny(layer_count: usize, model_dim: usize, vocab_size: usize) -> Self {
        Self {
            layer_count,
            head_count: 2,
            model_dim,
            feedforward_dim: 2 * model_dim,
            vocab_size,
            max_seq_len: 16,
            yes_token_id: 0,
            no_token_id: 1,
        }
    }
}
