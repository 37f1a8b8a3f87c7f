//! Two-stage optimization: cross-entropy pretraining, then self-critical
//! policy gradient with the contrastive reward and masked negatives.

mod ablate;
mod data;
mod negative;
mod optim;
mod steps;
mod trainer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::groups::GroupError;
use crate::metrics::{DisCiderParams, RewardConfig};
use crate::model::{ModelConfig, ModelError};
use crate::tensor::TensorError;

pub use ablate::{ablate, AblationResult, GridRow};
pub use data::{build_examples, Example};
pub use negative::{
    attribution, make_negative, sim_mask_sets, similarity, top_mass_prefix, AttributionScores, MaskLevel, MaskSpec,
    MaskStrategy, NegativeInput,
};
pub use optim::{global_norm, mean_grads, Sgd};
pub use steps::{
    baseline, decode_pair, score_candidates, scst_gradients, scst_step, teacher_forced_hits, xe_gradients, xe_step,
    NegativeDecode, RewardContext, ScoredCandidate, ScstBatch,
};
pub use trainer::{caption_examples, train, LogRecord, Phase, TrainOutcome, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("attribution: {0}")]
    Attribution(String),
    #[error("no training examples: no train-split image has a reference group")]
    NoExamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything a training run depends on. `model.d_feat` and
/// `model.vocab_size` are taken from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr_xe: f64,
    pub lr_rl: f64,
    pub momentum: f64,
    /// Global gradient-norm cap; `null` disables clipping.
    pub grad_clip: Option<f64>,
    pub steps_xe: usize,
    pub steps_rl: usize,
    pub batch_size: usize,
    /// Beam width for SCST candidates.
    pub beam: usize,
    pub negative: NegativeDecode,
    pub reward: RewardConfig,
    pub mask: MaskSpec,
    pub discider: DisCiderParams,
    /// Evaluate every this many steps of a phase; 0 evaluates at phase ends only.
    pub eval_every: usize,
    /// Beam width for evaluation captions; `null` decodes greedily.
    pub eval_beam: Option<usize>,
    /// Starting weights and vocabulary instead of a fresh model.
    pub init_checkpoint: Option<PathBuf>,
    /// Externally computed attribution scores keyed by target id.
    pub attribution_file: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr_xe: 1e-3,
            lr_rl: 1e-4,
            momentum: 0.9,
            grad_clip: Some(5.0),
            steps_xe: 1000,
            steps_rl: 200,
            batch_size: 16,
            beam: 5,
            negative: NegativeDecode::PairedBeam,
            reward: RewardConfig::default(),
            mask: MaskSpec::default(),
            discider: DisCiderParams::default(),
            eval_every: 100,
            eval_beam: None,
            init_checkpoint: None,
            attribution_file: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr_xe > 0.0 && self.lr_xe.is_finite() && self.lr_rl > 0.0 && self.lr_rl.is_finite()) {
            return bad("learning rates must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.steps_xe + self.steps_rl == 0 {
            return bad("steps_xe + steps_rl must be positive");
        }
        if self.batch_size == 0 || self.beam == 0 || self.eval_beam == Some(0) {
            return bad("batch_size, beam and eval_beam must be positive");
        }
        self.reward.validate().map_err(TrainError::Config)?;
        self.discider.validate().map_err(TrainError::Config)?;
        self.mask.validate()
    }
}
