//! Scoring generated captions against ground truth: BLEU-1/4, CIDEr and
//! DisCIDEr against each target's reference group.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetManifest;
use crate::groups::ReferenceGroup;
use crate::metrics::{bleu, corpus_bleu, tokenize, DfTable, DisCiderParams, PreparedRefs, ReferenceNGrams, TokenSeq};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("candidates line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("candidate for unknown image {0:?}")]
    UnknownImage(String),
    #[error("image {0:?} has no ground-truth captions")]
    NoGroundTruth(String),
    #[error("no candidates to evaluate")]
    Empty,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a candidates file. Extra fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLine {
    pub image_id: String,
    pub caption: String,
}

/// Reads `{"image_id","caption"}` lines. Only the first caption of each
/// image is kept, so beam output ranked best first can be scored directly.
pub fn read_candidates<R: BufRead>(reader: R) -> Result<Vec<(String, TokenSeq)>, EvalError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CandidateLine =
            serde_json::from_str(&line).map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?;
        if seen.insert(c.image_id.clone()) {
            out.push((c.image_id, tokenize(&c.caption)));
        }
    }
    Ok(out)
}

pub fn load_candidates(path: &Path) -> Result<Vec<(String, TokenSeq)>, EvalError> {
    read_candidates(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: String,
    pub caption: String,
    #[serde(rename = "B-1")]
    pub bleu1: f64,
    #[serde(rename = "B-4")]
    pub bleu4: f64,
    #[serde(rename = "C")]
    pub cider: f64,
    /// Absent when the image has no reference group.
    #[serde(rename = "DisC")]
    pub discider: Option<f64>,
}

/// Corpus BLEU over all candidates; CIDEr and DisCIDEr are per-image means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub images: usize,
    #[serde(rename = "B-1")]
    pub bleu1: f64,
    #[serde(rename = "B-4")]
    pub bleu4: f64,
    #[serde(rename = "C")]
    pub cider: f64,
    #[serde(rename = "DisC")]
    pub discider: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScores>,
    pub corpus: CorpusScores,
}

impl EvalReport {
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }
}

/// Scores one caption per image. Document frequencies come from the
/// ground truth of the evaluated images; DisCIDEr uses the image's group
/// when `groups` has one for it.
pub fn evaluate(
    candidates: &[(String, TokenSeq)],
    manifest: &DatasetManifest,
    groups: &BTreeMap<String, ReferenceGroup>,
    params: &DisCiderParams,
) -> Result<EvalReport, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut gts = Vec::with_capacity(candidates.len());
    for (id, _) in candidates {
        let img = manifest.get(id).ok_or_else(|| EvalError::UnknownImage(id.clone()))?;
        let gt = img.tokenized_captions();
        if gt.is_empty() {
            return Err(EvalError::NoGroundTruth(id.clone()));
        }
        gts.push(gt);
    }
    let df = DfTable::from_images(gts.iter().map(Vec::as_slice));
    let per_image = candidates
        .par_iter()
        .zip(&gts)
        .map(|((id, cand), gt)| {
            let cider = PreparedRefs::cider(gt, &df).score_tokens(cand, &df);
            let discider = groups.get(id).map(|g| {
                let ref_caps: Vec<Vec<TokenSeq>> = g
                    .references
                    .iter()
                    .map(|r| manifest.get(r).map(|i| i.tokenized_captions()).unwrap_or_default())
                    .collect();
                let refs = ReferenceNGrams::new(&ref_caps);
                PreparedRefs::discider(gt, &refs, &df, params).score_tokens(cand, &df)
            });
            ImageScores {
                image_id: id.clone(),
                caption: cand.join(),
                bleu1: bleu(cand, gt, 1, 0.0),
                bleu4: bleu(cand, gt, 4, 0.0),
                cider,
                discider,
            }
        })
        .collect::<Vec<_>>();
    let pairs = || candidates.iter().zip(&gts).map(|((_, c), g)| (c, g.as_slice()));
    let n = per_image.len() as f64;
    let dis: Vec<f64> = per_image.iter().filter_map(|s| s.discider).collect();
    let corpus = CorpusScores {
        images: per_image.len(),
        bleu1: corpus_bleu(pairs(), 1),
        bleu4: corpus_bleu(pairs(), 4),
        cider: per_image.iter().map(|s| s.cider).sum::<f64>() / n,
        discider: (!dis.is_empty()).then(|| dis.iter().sum::<f64>() / dis.len() as f64),
    };
    Ok(EvalReport { per_image, corpus })
}

/// Groups keyed by target id.
pub fn index_groups(groups: &[ReferenceGroup]) -> BTreeMap<String, ReferenceGroup> {
    groups.iter().map(|g| (g.target.clone(), g.clone())).collect()
}
