use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Serialize};

use refdic_core::corpus::{
    load_embeddings, load_manifest, synth_corpus, CorpusError, DatasetManifest, Split, SynthConfig,
};
use refdic_core::eval::{evaluate, index_groups, load_candidates, EvalError};
use refdic_core::groups::{
    self, check_against_manifest, load_groups, save_groups, GroupBuildConfig, GroupError, ReferenceGroup,
};
use refdic_core::metrics::DisCiderParams;
use refdic_core::model::{beam, greedy, ModelError, SearchSpec, TransDic};
use refdic_core::train::{self, GridRow, TrainConfig, TrainError};

/// Error classes mapped to exit codes 2 and 3.
#[derive(Debug)]
pub enum Failure {
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

type Result<T> = std::result::Result<T, Failure>;

fn data(e: impl Into<anyhow::Error>, what: impl std::fmt::Display) -> Failure {
    Failure::Data(e.into().context(what.to_string()))
}

fn runtime(e: impl Into<anyhow::Error>, what: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.into().context(what.to_string()))
}

fn model_failure(e: ModelError, what: impl std::fmt::Display) -> Failure {
    match e {
        ModelError::Tensor(_) | ModelError::PrefixTooLong { .. } => runtime(e, what),
        _ => data(e, what),
    }
}

fn train_failure(e: TrainError, what: impl std::fmt::Display) -> Failure {
    match e {
        TrainError::Model(m) => model_failure(m, what),
        TrainError::Tensor(_) | TrainError::NonFinite(_) => runtime(e, what),
        _ => data(e, what),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| data(e, format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data(e, format!("parsing {}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()
    };
    write().map_err(|e| runtime(e, format!("writing {}", path.display())))
}

fn manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).map_err(|e: CorpusError| data(e, format!("loading manifest {}", path.display())))
}

fn grouped(path: &Path, manifest: &DatasetManifest) -> Result<Vec<ReferenceGroup>> {
    let groups = load_groups(path).map_err(|e: GroupError| data(e, format!("loading groups {}", path.display())))?;
    check_against_manifest(&groups, manifest).map_err(|e| data(e, format!("checking {}", path.display())))?;
    Ok(groups)
}

pub fn synth(seed: u64, images: usize, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let (m, emb) = synth_corpus(seed, images, &cfg).map_err(|e| data(e, "generating corpus"))?;
    std::fs::create_dir_all(out).map_err(|e| runtime(e, format!("creating {}", out.display())))?;
    m.save(&out.join("manifest.jsonl")).map_err(|e| runtime(e, "writing manifest.jsonl"))?;
    emb.save(&out.join("embeddings.rdke")).map_err(|e| runtime(e, "writing embeddings.rdke"))?;
    log::info!("wrote {} images to {}", m.len(), out.display());
    Ok(())
}

pub fn build_groups(manifest_path: &Path, embeddings: &Path, cfg: GroupBuildConfig, out: &Path) -> Result<()> {
    let m = manifest(manifest_path)?;
    let emb =
        load_embeddings(embeddings).map_err(|e| data(e, format!("loading embeddings {}", embeddings.display())))?;
    let groups = groups::build_groups(&m, &emb, &cfg).map_err(|e| data(e, "building groups"))?;
    save_groups(&groups, out).map_err(|e| runtime(e, format!("writing {}", out.display())))
}

pub fn eval(manifest_path: &Path, candidates: &Path, groups: Option<&Path>, m: f64, n: f64, out: &Path) -> Result<()> {
    let man = manifest(manifest_path)?;
    let params = DisCiderParams { m, n };
    params.validate().map_err(|e| data(anyhow!(e), "DisCIDEr parameters"))?;
    let cands = load_candidates(candidates).map_err(|e| data(e, format!("loading {}", candidates.display())))?;
    let groups = match groups {
        Some(p) => index_groups(&grouped(p, &man)?),
        None => Default::default(),
    };
    let report = evaluate(&cands, &man, &groups, &params).map_err(|e: EvalError| data(e, "scoring candidates"))?;
    write_json(&report, out)
}

pub fn train(config: &Path, manifest_path: &Path, groups: &Path, out: &Path) -> Result<()> {
    let cfg: TrainConfig = read_json(config)?;
    let m = manifest(manifest_path)?;
    let g = grouped(groups, &m)?;
    let outcome = train::train(&cfg, &m, &g, Some(out)).map_err(|e| train_failure(e, "training"))?;
    if let Some(last) = outcome.log.last() {
        log::info!("final {:?}", last.scores);
    }
    Ok(())
}

pub struct GenerateOptions {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub groups: PathBuf,
    pub beam: usize,
    pub max_len: Option<usize>,
    pub split: Option<Split>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CaptionLine<'a> {
    image_id: &'a str,
    caption: String,
    log_prob: f64,
    rank: usize,
}

pub fn generate(opts: &GenerateOptions) -> Result<()> {
    let (model, vocab) = TransDic::load(&opts.checkpoint)
        .map_err(|e| model_failure(e, format!("loading {}", opts.checkpoint.display())))?;
    let m = manifest(&opts.manifest)?;
    if m.d_feat() != model.config().d_feat {
        return Err(data(
            anyhow!("manifest has d_feat {}, the checkpoint expects {}", m.d_feat(), model.config().d_feat),
            "checking inputs",
        ));
    }
    let groups = grouped(&opts.groups, &m)?;
    let mut spec: SearchSpec = model.search_spec();
    if let Some(len) = opts.max_len {
        if len == 0 || len > spec.max_len {
            return Err(data(anyhow!("--max-len must be in 1..={}", spec.max_len), "checking options"));
        }
        spec.max_len = len;
    }
    let index = index_groups(&groups);
    let targets: Vec<&ReferenceGroup> = m
        .images()
        .iter()
        .filter(|i| opts.split.is_none_or(|s| i.split == s))
        .filter_map(|i| index.get(&i.id))
        .collect();
    let results = targets
        .par_iter()
        .map(|g| {
            let target = &m.require(&g.target)?.features;
            let refs = g
                .references
                .iter()
                .map(|r| Ok(&m.require(r)?.features))
                .collect::<std::result::Result<Vec<_>, CorpusError>>()?;
            let memory = model.memory(target, &refs)?;
            let scorer = |p: &[usize]| model.next_logprobs(&Arc::clone(&memory), p);
            let hyps = match opts.beam {
                0 => vec![greedy(&scorer, &spec)?],
                w => beam(&scorer, &spec, w)?,
            };
            Ok((g.target.as_str(), hyps))
        })
        .collect::<std::result::Result<Vec<_>, anyhow::Error>>()
        .map_err(|e| Failure::Runtime(e.context("generating captions")))?;
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&opts.out)?);
        for (id, hyps) in &results {
            for (rank, h) in hyps.iter().enumerate() {
                let line =
                    CaptionLine { image_id: id, caption: vocab.decode(&h.tokens).join(), log_prob: h.log_prob, rank };
                serde_json::to_writer(&mut w, &line)?;
                writeln!(w)?;
            }
        }
        w.flush()
    };
    write().map_err(|e| runtime(e, format!("writing {}", opts.out.display())))
}

pub fn ablate(grid: &Path, config: &Path, manifest_path: &Path, groups: &Path, out: &Path) -> Result<()> {
    let rows: Vec<GridRow> = read_json(grid)?;
    let cfg: TrainConfig = read_json(config)?;
    let m = manifest(manifest_path)?;
    let g = grouped(groups, &m)?;
    let results = train::ablate(&cfg, &m, &g, &rows).map_err(|e| train_failure(e, "running ablation"))?;
    let write = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["alpha_b", "alpha_c", "beta", "lambda", "split", "images", "B-1", "B-4", "C", "DisC"])?;
        for r in &results {
            let s = &r.scores;
            w.write_record([
                r.reward.alpha_b.to_string(),
                r.reward.alpha_c.to_string(),
                r.reward.beta.to_string(),
                r.reward.lambda.to_string(),
                r.split.to_string(),
                s.images.to_string(),
                s.bleu1.to_string(),
                s.bleu4.to_string(),
                s.cider.to_string(),
                s.discider.map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Failure::Runtime(e.context(format!("writing {}", out.display()))))
}
