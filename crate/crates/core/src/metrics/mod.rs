//! Caption metrics and the contrastive reward built on them.
//!
//! Everything here is a pure function of its inputs; a [`DfTable`] is
//! immutable once built, so candidates can be scored in parallel.

mod bleu;
mod cider;
mod ngram;
mod reward;
mod tokenize;

pub use bleu::{bleu, corpus_bleu, REWARD_SMOOTHING};
pub use cider::{cider, discider, irf_factor, DisCiderParams, NGramVector, PreparedRefs, ReferenceNGrams};
pub use ngram::{ngram_counts, DfTable, MAX_N};
pub use reward::{bleuder, bleuder_from_parts, disreward, final_reward, MetricParts, RewardConfig};
pub use tokenize::{tokenize, TokenSeq};
