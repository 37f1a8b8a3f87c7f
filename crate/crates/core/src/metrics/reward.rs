use serde::{Deserialize, Serialize};

use super::bleu::{bleu, REWARD_SMOOTHING};
use super::cider::PreparedRefs;
use super::ngram::DfTable;
use super::TokenSeq;

/// Coefficients of the contrastive reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha_b: f64,
    pub alpha_c: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha_b: 0.25, alpha_c: 0.5, beta: 8.0, lambda: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(format!("beta must be non-negative, got {}", self.beta));
        }
        for (name, v) in [("alpha_b", self.alpha_b), ("alpha_c", self.alpha_c), ("lambda", self.lambda)] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite"));
            }
        }
        Ok(())
    }
}

/// `α_b·BLEU1 + α_b·BLEU4 + α_c·CIDEr` from precomputed component scores.
pub fn bleuder_from_parts(bleu1: f64, bleu4: f64, cider: f64, cfg: &RewardConfig) -> f64 {
    cfg.alpha_b * bleu1 + cfg.alpha_b * bleu4 + cfg.alpha_c * cider
}

/// Component scores of [`bleuder`] for one candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricParts {
    pub bleu1: f64,
    pub bleu4: f64,
    pub cider: f64,
}

impl MetricParts {
    /// Sentence BLEU-1/4 (reward smoothing) and CIDEr against prepared ground truth.
    pub fn compute(candidate: &TokenSeq, gt: &[TokenSeq], prepared: &PreparedRefs, df: &DfTable) -> Self {
        Self {
            bleu1: bleu(candidate, gt, 1, REWARD_SMOOTHING),
            bleu4: bleu(candidate, gt, 4, REWARD_SMOOTHING),
            cider: prepared.score_tokens(candidate, df),
        }
    }

    pub fn bleuder(&self, cfg: &RewardConfig) -> f64 {
        bleuder_from_parts(self.bleu1, self.bleu4, self.cider, cfg)
    }
}

/// Mixed BLEU/CIDEr metric, all components on the ×100 scale.
pub fn bleuder(candidate: &TokenSeq, gt: &[TokenSeq], df: &DfTable, cfg: &RewardConfig) -> f64 {
    MetricParts::compute(candidate, gt, &PreparedRefs::cider(gt, df), df).bleuder(cfg)
}

/// `−max(0, bleuder_neg − bleuder_pos + β)`.
pub fn disreward(bleuder_pos: f64, bleuder_neg: f64, beta: f64) -> f64 {
    -f64::max(0.0, bleuder_neg - bleuder_pos + beta)
}

/// `CIDEr(c_pos) + λ·DisReward(c_pos)`.
pub fn final_reward(cider_pos: f64, disreward: f64, lambda: f64) -> f64 {
    cider_pos + lambda * disreward
}
