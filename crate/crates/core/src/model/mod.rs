//! TransDIC captioner: memory projection, proposal matching, the two-flow
//! encoder, a transformer decoder and greedy/beam decoding.

mod net;
mod search;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;

pub use net::{match_proposals, Encoding, TransDic};
pub use search::{beam, greedy, Hypothesis, SearchSpec, StepScorer};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input dimension {found} does not match d_feat {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("prefix of length {len} exceeds max_len {max_len}")]
    PrefixTooLong { len: usize, max_len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which encoder flows feed the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Target flow and target-reference flow, concatenated.
    #[default]
    Full,
    /// Target flow only: a plain transformer captioner.
    TargetOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_feat: usize,
    pub d_model: usize,
    pub n_layers_target: usize,
    pub n_layers_select: usize,
    pub n_layers_fuse: usize,
    pub n_layers_decoder: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    /// Longest generated sequence, closing EOS included.
    pub max_len: usize,
    pub variant: EncoderVariant,
    /// Select layers attend to the projected reference features at every
    /// depth instead of the fuse outputs.
    pub select_raw_refs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_feat: 64,
            d_model: 512,
            n_layers_target: 3,
            n_layers_select: 3,
            n_layers_fuse: 3,
            n_layers_decoder: 3,
            n_heads: 8,
            vocab_size: 4,
            max_len: 20,
            variant: EncoderVariant::Full,
            select_raw_refs: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_feat == 0 || self.d_model == 0 {
            return bad("d_feat and d_model must be positive".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        let layers = [self.n_layers_target, self.n_layers_select, self.n_layers_fuse, self.n_layers_decoder];
        if layers.contains(&0) {
            return bad("every layer count must be at least 1".into());
        }
        if self.vocab_size <= UNK + 1 {
            return bad("vocab_size must include at least one word beyond the specials".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        Ok(())
    }
}
