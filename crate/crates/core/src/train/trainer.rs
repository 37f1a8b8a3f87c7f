use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{build_examples, Example};
use super::negative::{make_negative, AttributionScores, MaskStrategy, NegativeInput};
use super::optim::{mean_grads, Sgd};
use super::steps::{score_candidates, scst_gradients, xe_gradients, NegativeDecode, RewardContext};
use super::{TrainConfig, TrainError};
use crate::corpus::{DatasetManifest, Split};
use crate::eval::{evaluate, index_groups, CorpusScores, EvalReport};
use crate::groups::ReferenceGroup;
use crate::metrics::{DfTable, PreparedRefs, TokenSeq};
use crate::model::{TransDic, Vocab};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Xe,
    Rl,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: Phase,
    /// Steps completed in this phase.
    pub step: usize,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub eval_split: Split,
    #[serde(flatten)]
    pub scores: CorpusScores,
}

/// Owns the model and optimizer state for a run over one manifest.
#[derive(Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    manifest: &'a DatasetManifest,
    groups: BTreeMap<String, ReferenceGroup>,
    vocab: Vocab,
    model: TransDic,
    train: Vec<Example>,
    eval: Vec<Example>,
    eval_split: Split,
    df: DfTable,
    prepared: Vec<PreparedRefs>,
    attributions: Option<BTreeMap<String, AttributionScores>>,
    order_rng: ChaCha8Rng,
    mask_draws: u64,
    log: Vec<LogRecord>,
    best: Option<(f64, TransDic)>,
}

impl<'a> Trainer<'a> {
    /// Builds the vocabulary from the train split (or loads it with the
    /// initial checkpoint) and the train/eval examples. Evaluation uses the
    /// val split, or train when val has no grouped images.
    pub fn new(cfg: TrainConfig, manifest: &'a DatasetManifest, groups: &[ReferenceGroup]) -> Result<Self, TrainError> {
        cfg.validate()?;
        let groups = index_groups(groups);
        let (model, vocab) = match &cfg.init_checkpoint {
            Some(path) => {
                let (m, v) = TransDic::load(path)?;
                if m.config().d_feat != manifest.d_feat() {
                    return Err(TrainError::Config(format!(
                        "checkpoint expects d_feat {}, the manifest has {}",
                        m.config().d_feat,
                        manifest.d_feat()
                    )));
                }
                (m, v)
            }
            None => {
                let caps: Vec<TokenSeq> = manifest.split(Split::Train).flat_map(|i| i.tokenized_captions()).collect();
                let vocab = Vocab::build(&caps);
                let mut mc = cfg.model.clone();
                mc.d_feat = manifest.d_feat();
                mc.vocab_size = vocab.len();
                (TransDic::new(mc, cfg.seed)?, vocab)
            }
        };
        let train = build_examples(manifest, &groups, Split::Train, &vocab)?;
        if train.iter().all(|e| e.captions.is_empty()) {
            return Err(TrainError::NoExamples);
        }
        let val = build_examples(manifest, &groups, Split::Val, &vocab)?;
        let (eval, eval_split) = if val.is_empty() { (train.clone(), Split::Train) } else { (val, Split::Val) };
        if cfg.mask.strategy == MaskStrategy::ImagePool {
            for e in &train {
                cfg.mask.validate_pool(e.refs.len())?;
                if e.pool.len() < cfg.mask.pool_size {
                    return Err(TrainError::Config(format!(
                        "group of {} has {} pool images, image_pool needs {}",
                        e.id,
                        e.pool.len(),
                        cfg.mask.pool_size
                    )));
                }
            }
        }
        let df = DfTable::from_images(train.iter().map(|e| e.gt.as_slice()));
        let prepared = train.iter().map(|e| PreparedRefs::cider(&e.gt, &df)).collect();
        let attributions = cfg.attribution_file.as_deref().map(AttributionScores::load_map).transpose()?;
        let order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0bde);
        Ok(Self {
            cfg,
            manifest,
            groups,
            vocab,
            model,
            train,
            eval,
            eval_split,
            df,
            prepared,
            attributions,
            order_rng,
            mask_draws: 0,
            log: Vec::new(),
            best: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Settings for the next phases; the data and model stay as they are.
    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn model(&self) -> &TransDic {
        &self.model
    }

    pub fn train_examples(&self) -> &[Example] {
        &self.train
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Best evaluated model by corpus DisCIDEr, with its score.
    pub fn best(&self) -> Option<(f64, &TransDic)> {
        self.best.as_ref().map(|(s, m)| (*s, m))
    }

    /// Cross-entropy phase: `steps_xe` updates over shuffled (image, caption) pairs.
    pub fn run_xe(&mut self) -> Result<(), TrainError> {
        let pairs: Vec<(usize, usize)> =
            self.train.iter().enumerate().flat_map(|(i, e)| (0..e.captions.len()).map(move |c| (i, c))).collect();
        let mut opt = Sgd::new(self.model.store(), self.cfg.lr_xe, self.cfg.momentum, self.cfg.grad_clip);
        let mut queue = Vec::new();
        let mut losses = Vec::new();
        for step in 1..=self.cfg.steps_xe {
            let batch = self.next_batch(&pairs, &mut queue);
            let results = batch
                .par_iter()
                .map(|&(i, c)| {
                    let e = &self.train[i];
                    xe_gradients(&self.model, &e.target, &e.ref_views(), &e.captions[c])
                })
                .collect::<Result<Vec<_>, _>>()?;
            let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
            let grads = mean_grads(results.into_iter().map(|r| r.1).collect()).expect("batch is never empty");
            opt.step(self.model.store_mut(), &grads)?;
            losses.push(loss);
            self.maybe_eval(super::Phase::Xe, step, self.cfg.steps_xe, &mut losses)?;
        }
        Ok(())
    }

    /// Self-critical phase: `steps_rl` updates over shuffled target images.
    pub fn run_rl(&mut self) -> Result<(), TrainError> {
        let items: Vec<usize> = (0..self.train.len()).filter(|&i| !self.train[i].captions.is_empty()).collect();
        let mut opt = Sgd::new(self.model.store(), self.cfg.lr_rl, self.cfg.momentum, self.cfg.grad_clip);
        let mut queue = Vec::new();
        let mut losses = Vec::new();
        for step in 1..=self.cfg.steps_rl {
            let batch = self.next_batch(&items, &mut queue);
            let first_draw = self.mask_draws;
            self.mask_draws += batch.len() as u64;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| self.scst_item(i, first_draw + j as u64))
                .collect::<Result<Vec<_>, _>>()?;
            let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
            let grads = mean_grads(results.into_iter().map(|r| r.1).collect()).expect("batch is never empty");
            opt.step(self.model.store_mut(), &grads)?;
            losses.push(loss);
            self.maybe_eval(super::Phase::Rl, step, self.cfg.steps_rl, &mut losses)?;
        }
        Ok(())
    }

    fn next_batch<T: Copy>(&mut self, items: &[T], queue: &mut Vec<T>) -> Vec<T> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if queue.is_empty() {
                queue.extend_from_slice(items);
                queue.shuffle(&mut self.order_rng);
                queue.reverse();
            }
            batch.push(queue.pop().expect("refilled above"));
        }
        batch
    }

    fn scst_item(&self, i: usize, draw: u64) -> Result<(f64, Vec<Tensor>), TrainError> {
        let e = &self.train[i];
        let refs = e.ref_views();
        let pos_mem = self.model.memory(&e.target, &refs)?;
        let cands = self.model.beam_from_memory(&pos_mem, self.cfg.beam)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.mask.seed);
        rng.set_stream(draw);
        let pool = e.pool_views();
        let input = NegativeInput {
            model: &self.model,
            target: &e.target,
            refs: &refs,
            pool: &pool,
            caption: cands.first().map(|h| h.tokens.as_slice()),
            attribution: self.attributions.as_ref().and_then(|a| a.get(&e.id)),
        };
        let neg_refs = make_negative(&input, &self.cfg.mask, &mut rng)?;
        let neg_views: Vec<&Tensor> = neg_refs.iter().collect();
        let neg_mem = self.model.memory(&e.target, &neg_views)?;
        let negs = match self.cfg.negative {
            NegativeDecode::PairedBeam => self.model.beam_from_memory(&neg_mem, self.cfg.beam)?,
            NegativeDecode::Greedy => vec![self.model.greedy_from_memory(&neg_mem)?],
        };
        let ctx = RewardContext { gt: &e.gt, prepared: &self.prepared[i], df: &self.df, reward: &self.cfg.reward };
        let batch = score_candidates(&self.vocab, &cands, &negs, &ctx)?;
        scst_gradients(&self.model, &e.target, &refs, &batch)
    }

    fn maybe_eval(
        &mut self,
        phase: super::Phase,
        step: usize,
        total: usize,
        losses: &mut Vec<f64>,
    ) -> Result<(), TrainError> {
        let every = self.cfg.eval_every;
        if step != total && (every == 0 || !step.is_multiple_of(every)) {
            return Ok(());
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        losses.clear();
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(format!("{phase:?} loss at step {step}")));
        }
        let report = self.evaluate_examples(&self.model, &self.eval)?;
        let rec = LogRecord { phase, step, loss, eval_split: self.eval_split, scores: report.corpus };
        log::info!("{}", serde_json::to_string(&rec)?);
        let dis = report.corpus.discider.unwrap_or(f64::NEG_INFINITY);
        if self.best.as_ref().is_none_or(|(b, _)| dis > *b) {
            self.best = Some((dis, self.model.clone()));
        }
        self.log.push(rec);
        Ok(())
    }

    /// Captions for `examples` (greedy or `eval_beam`), scored against the manifest.
    pub fn evaluate_examples(&self, model: &TransDic, examples: &[Example]) -> Result<EvalReport, TrainError> {
        let captions = caption_examples(model, &self.vocab, examples, self.cfg.eval_beam)?;
        Ok(evaluate(&captions, self.manifest, &self.groups, &self.cfg.discider)?)
    }

    /// Scores the current model on every grouped image of `split`.
    pub fn evaluate_split(&self, model: &TransDic, split: Split) -> Result<EvalReport, TrainError> {
        let examples = build_examples(self.manifest, &self.groups, split, &self.vocab)?;
        self.evaluate_examples(model, &examples)
    }
}

/// Best caption per example, decoded greedily or with a beam of the given width.
pub fn caption_examples(
    model: &TransDic,
    vocab: &Vocab,
    examples: &[Example],
    beam: Option<usize>,
) -> Result<Vec<(String, TokenSeq)>, TrainError> {
    examples
        .par_iter()
        .map(|e| {
            let hyps = model.generate(&e.target, &e.ref_views(), beam)?;
            let best = hyps.first().map(|h| vocab.decode(&h.tokens)).unwrap_or_default();
            Ok((e.id.clone(), best))
        })
        .collect()
}

/// Artifacts of [`train`].
pub struct TrainOutcome {
    pub vocab: Vocab,
    pub xe_model: TransDic,
    pub final_model: TransDic,
    pub best_model: TransDic,
    pub log: Vec<LogRecord>,
}

/// Runs both phases. With `out`, writes `config.json`, `metrics.jsonl`,
/// `xe.ckpt`, `last.ckpt` and `best.ckpt` there.
pub fn train(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    groups: &[ReferenceGroup],
    out: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(cfg.clone(), manifest, groups)?;
    t.run_xe()?;
    let xe_model = t.model.clone();
    t.run_rl()?;
    let best_model = t.best().map_or_else(|| t.model.clone(), |(_, m)| m.clone());
    let outcome =
        TrainOutcome { vocab: t.vocab.clone(), xe_model, final_model: t.model.clone(), best_model, log: t.log.clone() };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut c = BufWriter::new(File::create(dir.join("config.json"))?);
        serde_json::to_writer_pretty(&mut c, cfg)?;
        writeln!(c)?;
        c.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        for rec in &outcome.log {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        w.flush()?;
        outcome.xe_model.save(&dir.join("xe.ckpt"), &outcome.vocab)?;
        outcome.final_model.save(&dir.join("last.ckpt"), &outcome.vocab)?;
        outcome.best_model.save(&dir.join("best.ckpt"), &outcome.vocab)?;
    }
    Ok(outcome)
}
