use serde::{Deserialize, Serialize};

use super::trainer::Trainer;
use super::{build_examples, TrainConfig, TrainError};
use crate::corpus::{DatasetManifest, Split};
use crate::eval::{index_groups, CorpusScores};
use crate::groups::ReferenceGroup;
use crate::metrics::RewardConfig;

/// One reward setting of an ablation grid; `lambda` defaults to the base config's.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRow {
    pub alpha_b: f64,
    pub alpha_c: f64,
    pub beta: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationResult {
    pub reward: RewardConfig,
    pub split: Split,
    pub scores: CorpusScores,
}

/// Trains the cross-entropy stage once, then runs the self-critical stage
/// from that shared starting point for every row and scores the final
/// model on the test split (val, then train, when test has no groups).
pub fn ablate(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    groups: &[ReferenceGroup],
    rows: &[GridRow],
) -> Result<Vec<AblationResult>, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::Config("ablation grid has no rows".into()));
    }
    let mut base = Trainer::new(cfg.clone(), manifest, groups)?;
    let indexed = index_groups(groups);
    let split = [Split::Test, Split::Val, Split::Train]
        .into_iter()
        .find(|&s| build_examples(manifest, &indexed, s, base.vocab()).is_ok_and(|e| !e.is_empty()))
        .ok_or(TrainError::NoExamples)?;
    base.run_xe()?;
    rows.iter()
        .map(|row| {
            let reward = RewardConfig {
                alpha_b: row.alpha_b,
                alpha_c: row.alpha_c,
                beta: row.beta,
                lambda: row.lambda.unwrap_or(cfg.reward.lambda),
            };
            reward.validate().map_err(TrainError::Config)?;
            let mut t = base.clone();
            t.config_mut().reward = reward;
            t.run_rl()?;
            let scores = t.evaluate_split(t.model(), split)?.corpus;
            log::info!("ablation row {row:?}: {scores:?}");
            Ok(AblationResult { reward, split, scores })
        })
        .collect()
}
