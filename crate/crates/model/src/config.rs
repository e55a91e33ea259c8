use serde::{Deserialize, Serialize};

use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Heads in each of the two encoder branches, and in every decoder attention.
    pub heads_per_branch: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    pub k_anc: u32,
    pub k_sib: u32,
    pub code_vocab: usize,
    pub summary_vocab: usize,
    /// Longest decoder input, BOS included.
    pub max_summary_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads_per_branch: 4,
            enc_layers: 2,
            dec_layers: 2,
            d_ff: 256,
            k_anc: 5,
            k_sib: 5,
            code_vocab: 0,
            summary_vocab: 0,
            max_summary_len: 32,
            dropout: 0.1,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads_per_branch
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_owned()));
        if self.d_model == 0 || self.heads_per_branch == 0 || self.d_ff == 0 || self.max_summary_len == 0 {
            return bad("d_model, heads_per_branch, d_ff and max_summary_len must be at least 1");
        }
        if self.d_model % self.heads_per_branch != 0 {
            return bad("d_model must be divisible by heads_per_branch");
        }
        // PAD, UNK, BOS and EOS always exist.
        if self.code_vocab < 4 || self.summary_vocab < 4 {
            return bad("vocabularies need at least the 4 reserved tokens");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}
