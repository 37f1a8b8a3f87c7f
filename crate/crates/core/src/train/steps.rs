use serde::{Deserialize, Serialize};

use super::optim::Sgd;
use super::TrainError;
use crate::metrics::{disreward, final_reward, DfTable, MetricParts, PreparedRefs, RewardConfig, TokenSeq};
use crate::model::{Hypothesis, TransDic, Vocab, BOS};
use crate::tensor::Tensor;

/// Summed caption cross-entropy and its parameter gradients.
pub fn xe_gradients(
    model: &TransDic,
    target: &Tensor,
    refs: &[&Tensor],
    words: &[usize],
) -> Result<(f64, Vec<Tensor>), TrainError> {
    if words.is_empty() {
        return Err(TrainError::EmptyCaption);
    }
    let mut g = model.graph();
    let t = g.input(target.clone())?;
    let r = refs.iter().map(|x| g.input((*x).clone())).collect::<Result<Vec<_>, _>>()?;
    let enc = model.encode(&mut g, t, &r)?;
    let loss = model.xe_loss(&mut g, enc.memory, words)?;
    let value = g.value(loss).item()?;
    let grads = g.tape.backward(loss)?;
    Ok((value, g.param_grads(&grads)))
}

/// One optimizer update on a single caption; returns the loss before the update.
pub fn xe_step(
    model: &mut TransDic,
    opt: &mut Sgd,
    target: &Tensor,
    refs: &[&Tensor],
    words: &[usize],
) -> Result<f64, TrainError> {
    let (loss, grads) = xe_gradients(model, target, refs, words)?;
    opt.step(model.store_mut(), &grads)?;
    Ok(loss)
}

/// Teacher-forced next-token predictions that equal the XE target, as
/// `(correct, total)`. Ties in the argmax go to the lower token id.
pub fn teacher_forced_hits(
    model: &TransDic,
    target: &Tensor,
    refs: &[&Tensor],
    words: &[usize],
) -> Result<(usize, usize), TrainError> {
    if words.is_empty() {
        return Err(TrainError::EmptyCaption);
    }
    let targets = model.xe_targets(words);
    let mut inputs = vec![BOS];
    inputs.extend_from_slice(&targets[..targets.len() - 1]);
    let mut g = model.graph();
    let t = g.input(target.clone())?;
    let r = refs.iter().map(|x| g.input((*x).clone())).collect::<Result<Vec<_>, _>>()?;
    let enc = model.encode(&mut g, t, &r)?;
    let lp = model.decode_logprobs(&mut g, enc.memory, &inputs)?;
    let lp = g.value(lp);
    let correct = targets
        .iter()
        .enumerate()
        .filter(|&(i, &want)| {
            let row = lp.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == want
        })
        .count();
    Ok((correct, targets.len()))
}

/// How the negative caption of each candidate is decoded from the masked input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeDecode {
    /// Beam search of the same width; candidate `i` is paired with negative `i`.
    #[default]
    PairedBeam,
    /// One greedy caption shared by every candidate.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub cider: f64,
    pub disreward: f64,
    pub reward: f64,
}

/// Beam candidates of one target with their rewards and the mean baseline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScstBatch {
    pub candidates: Vec<ScoredCandidate>,
    pub negatives: Vec<Vec<usize>>,
    pub baseline: f64,
}

impl ScstBatch {
    pub fn advantages(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward - self.baseline).collect()
    }
}

/// Mean reward, computed as `r_0 + mean(r_i − r_0)` so equal rewards give
/// the baseline exactly.
pub fn baseline(rewards: &[f64]) -> f64 {
    match rewards.first() {
        None => 0.0,
        Some(&r0) => r0 + rewards.iter().map(|r| r - r0).sum::<f64>() / rewards.len() as f64,
    }
}

/// Ground truth of one target, prepared for reward computation.
pub struct RewardContext<'a> {
    pub gt: &'a [TokenSeq],
    pub prepared: &'a PreparedRefs,
    pub df: &'a DfTable,
    pub reward: &'a RewardConfig,
}

/// `r_i = CIDEr(ĉ_i) + λ·DisReward(bleuder(ĉ_i), bleuder(c_neg))`.
pub fn score_candidates(
    vocab: &Vocab,
    candidates: &[Hypothesis],
    negatives: &[Hypothesis],
    ctx: &RewardContext,
) -> Result<ScstBatch, TrainError> {
    if candidates.is_empty() || negatives.is_empty() {
        return Err(TrainError::Config("SCST needs at least one candidate and one negative".into()));
    }
    let parts = |h: &Hypothesis| MetricParts::compute(&vocab.decode(&h.tokens), ctx.gt, ctx.prepared, ctx.df);
    let neg_parts: Vec<MetricParts> = negatives.iter().map(parts).collect();
    let scored: Vec<ScoredCandidate> = candidates
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let p = parts(h);
            let neg = &neg_parts[i.min(neg_parts.len() - 1)];
            let d = disreward(p.bleuder(ctx.reward), neg.bleuder(ctx.reward), ctx.reward.beta);
            ScoredCandidate {
                tokens: h.tokens.clone(),
                log_prob: h.log_prob,
                cider: p.cider,
                disreward: d,
                reward: final_reward(p.cider, d, ctx.reward.lambda),
            }
        })
        .collect();
    let rewards: Vec<f64> = scored.iter().map(|c| c.reward).collect();
    Ok(ScstBatch {
        baseline: baseline(&rewards),
        candidates: scored,
        negatives: negatives.iter().map(|h| h.tokens.clone()).collect(),
    })
}

/// Decodes candidates from the positive input and negatives from the masked one.
pub fn decode_pair(
    model: &TransDic,
    target: &Tensor,
    refs: &[&Tensor],
    neg_refs: &[&Tensor],
    width: usize,
    negative: NegativeDecode,
) -> Result<(Vec<Hypothesis>, Vec<Hypothesis>), TrainError> {
    let pos_mem = model.memory(target, refs)?;
    let candidates = model.beam_from_memory(&pos_mem, width)?;
    let neg_mem = model.memory(target, neg_refs)?;
    let negatives = match negative {
        NegativeDecode::PairedBeam => model.beam_from_memory(&neg_mem, width)?,
        NegativeDecode::Greedy => vec![model.greedy_from_memory(&neg_mem)?],
    };
    Ok((candidates, negatives))
}

/// `−(1/n) Σ_i (r_i − b) · log p(ĉ_i)` and its parameter gradients; rewards are constants.
pub fn scst_gradients(
    model: &TransDic,
    target: &Tensor,
    refs: &[&Tensor],
    batch: &ScstBatch,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let n = batch.candidates.len();
    if n == 0 {
        return Err(TrainError::Config("SCST batch has no candidates".into()));
    }
    let mut g = model.graph();
    let t = g.input(target.clone())?;
    let r = refs.iter().map(|x| g.input((*x).clone())).collect::<Result<Vec<_>, _>>()?;
    let enc = model.encode(&mut g, t, &r)?;
    let mut terms = Vec::with_capacity(n);
    for (c, adv) in batch.candidates.iter().zip(batch.advantages()) {
        let lp = model.sequence_logprob(&mut g, enc.memory, &c.tokens)?;
        terms.push(g.tape.scale(lp, -adv / n as f64)?);
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = g.tape.add(loss, t)?;
    }
    let value = g.value(loss).item()?;
    let grads = g.tape.backward(loss)?;
    Ok((value, g.param_grads(&grads)))
}

/// Full SCST update for one target given already built negative references.
#[allow(clippy::too_many_arguments)]
pub fn scst_step(
    model: &mut TransDic,
    opt: &mut Sgd,
    vocab: &Vocab,
    target: &Tensor,
    refs: &[&Tensor],
    neg_refs: &[&Tensor],
    width: usize,
    negative: NegativeDecode,
    ctx: &RewardContext,
) -> Result<(f64, ScstBatch), TrainError> {
    let (cands, negs) = decode_pair(model, target, refs, neg_refs, width, negative)?;
    let batch = score_candidates(vocab, &cands, &negs, ctx)?;
    let (loss, grads) = scst_gradients(model, target, refs, &batch)?;
    opt.step(model.store_mut(), &grads)?;
    Ok((loss, batch))
}
