//! Reference-group construction: embedding retrieval, scene-graph overlap
//! ranking and top-p..top-(p+K-1) selection.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{caption_key, CorpusError, DatasetManifest, EmbeddingTable, SceneGraph, SceneObject};
use crate::metrics::TokenSeq;
use crate::tensor::cosine;

#[derive(Debug, thiserror::Error)]
pub enum GroupError {
    #[error("missing embedding key {0:?}")]
    MissingEmbedding(String),
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("missing scene graph for image {0:?}")]
    MissingSceneGraph(String),
    #[error("target {target:?}: need {needed} ranked candidates, only {available} available (short by {})", needed - available)]
    InsufficientCandidates { target: String, needed: usize, available: usize },
    #[error("invalid group config: {0}")]
    InvalidConfig(String),
    #[error("invalid reference group for {target:?}: {message}")]
    InvalidGroup { target: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("groups file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupBuildConfig {
    pub coarse_size: usize,
    pub p: usize,
    pub k: usize,
    /// Size of the optional resampling pool, counted from rank `p`.
    pub pool_size: Option<usize>,
    /// Restrict candidates to images of the target's split.
    pub same_split: bool,
}

impl Default for GroupBuildConfig {
    fn default() -> Self {
        Self { coarse_size: 500, p: 3, k: 5, pool_size: None, same_split: true }
    }
}

impl GroupBuildConfig {
    pub fn validate(&self) -> Result<(), GroupError> {
        let bad = |m: String| Err(GroupError::InvalidConfig(m));
        if self.p == 0 || self.k == 0 {
            return bad("p and K must be at least 1".into());
        }
        if self.coarse_size < self.p + self.k - 1 {
            return bad(format!("coarse_size {} is below p + K - 1 = {}", self.coarse_size, self.p + self.k - 1));
        }
        if let Some(pool) = self.pool_size {
            if pool <= self.k {
                return bad(format!("pool_size {pool} must exceed K = {}", self.k));
            }
        }
        Ok(())
    }

    /// Number of fine-ranked candidates a target needs.
    pub fn needed(&self) -> usize {
        let pool = self.pool_size.unwrap_or(0).max(self.k);
        self.p - 1 + pool
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapScore {
    #[serde(rename = "obj")]
    pub object_overlap: u32,
    #[serde(rename = "attr")]
    pub attribute_overlap: u32,
    pub total: u32,
}

impl OverlapScore {
    pub fn new(object_overlap: u32, attribute_overlap: u32) -> Self {
        Self { object_overlap, attribute_overlap, total: object_overlap + attribute_overlap }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceGroup {
    pub target: String,
    pub references: Vec<String>,
    pub scores: Vec<OverlapScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Vec<String>>,
}

impl ReferenceGroup {
    pub fn k(&self) -> usize {
        self.references.len()
    }

    pub fn validate(&self) -> Result<(), GroupError> {
        let bad =
            |message: &str| Err(GroupError::InvalidGroup { target: self.target.clone(), message: message.into() });
        if self.references.is_empty() {
            return bad("no references");
        }
        if self.references.len() != self.scores.len() {
            return bad("references and scores differ in length");
        }
        if self.references.contains(&self.target) {
            return bad("target listed as its own reference");
        }
        let unique: HashSet<&String> = self.references.iter().collect();
        if unique.len() != self.references.len() {
            return bad("duplicate reference id");
        }
        if self.scores.iter().any(|s| s.total != s.object_overlap + s.attribute_overlap) {
            return bad("score total is not object + attribute overlap");
        }
        if let Some(pool) = &self.pool {
            if pool.len() <= self.references.len() || pool.contains(&self.target) {
                return bad("pool must exceed K and exclude the target");
            }
        }
        Ok(())
    }
}

/// Stage 1: rank every candidate caption by cosine to the target image
/// embedding and collect distinct parent images in encounter order.
/// Equal scores are ordered by image id, then caption index.
pub fn coarse_group(
    target_id: &str,
    emb: &EmbeddingTable,
    manifest: &DatasetManifest,
    cfg: &GroupBuildConfig,
) -> Result<Vec<String>, GroupError> {
    let target = manifest.get(target_id).ok_or_else(|| GroupError::UnknownImage(target_id.to_string()))?;
    let query =
        emb.get(&target.embedding_key).ok_or_else(|| GroupError::MissingEmbedding(target.embedding_key.clone()))?;
    let mut scored: Vec<(f64, &str, usize)> = Vec::new();
    for img in manifest.images() {
        if img.id == target_id || (cfg.same_split && img.split != target.split) {
            continue;
        }
        for i in 0..img.captions.len() {
            let key = caption_key(&img.id, i);
            let v = emb.get(&key).ok_or(GroupError::MissingEmbedding(key))?;
            scored.push((cosine(query, v), img.id.as_str(), i));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, id, _) in scored {
        if out.len() == cfg.coarse_size {
            break;
        }
        if seen.insert(id) {
            out.push(id.to_string());
        }
    }
    Ok(out)
}

/// Shared categories plus shared `(category, attribute)` pairs.
pub fn overlap_score(g1: &SceneGraph, g2: &SceneGraph) -> OverlapScore {
    let objects = g1.categories().intersection(&g2.categories()).count() as u32;
    let attributes = g1.attribute_pairs().intersection(&g2.attribute_pairs()).count() as u32;
    OverlapScore::new(objects, attributes)
}

/// Stage 2: sort coarse candidates by total overlap with the target,
/// descending, ties by image id.
pub fn fine_rank<'a, F>(
    target_id: &str,
    coarse: &[String],
    graphs: F,
) -> Result<Vec<(String, OverlapScore)>, GroupError>
where
    F: Fn(&str) -> Option<&'a SceneGraph>,
{
    let target = graphs(target_id).ok_or_else(|| GroupError::MissingSceneGraph(target_id.to_string()))?;
    let mut ranked = coarse
        .iter()
        .map(|id| {
            let g = graphs(id).ok_or_else(|| GroupError::MissingSceneGraph(id.clone()))?;
            Ok((id.clone(), overlap_score(target, g)))
        })
        .collect::<Result<Vec<_>, GroupError>>()?;
    ranked.sort_by(|a, b| b.1.total.cmp(&a.1.total).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Takes ranks `p..=p+K-1` (1-indexed) of the fine ranking.
pub fn select_references(
    target_id: &str,
    ranked: &[(String, OverlapScore)],
    cfg: &GroupBuildConfig,
) -> Result<ReferenceGroup, GroupError> {
    cfg.validate()?;
    let needed = cfg.needed();
    if ranked.len() < needed {
        return Err(GroupError::InsufficientCandidates {
            target: target_id.to_string(),
            needed,
            available: ranked.len(),
        });
    }
    let chosen = &ranked[cfg.p - 1..cfg.p - 1 + cfg.k];
    let pool = cfg.pool_size.map(|n| ranked[cfg.p - 1..cfg.p - 1 + n].iter().map(|(id, _)| id.clone()).collect());
    Ok(ReferenceGroup {
        target: target_id.to_string(),
        references: chosen.iter().map(|(id, _)| id.clone()).collect(),
        scores: chosen.iter().map(|(_, s)| *s).collect(),
        pool,
    })
}

/// Full two-stage construction for one target.
pub fn build_group(
    target_id: &str,
    emb: &EmbeddingTable,
    manifest: &DatasetManifest,
    cfg: &GroupBuildConfig,
) -> Result<ReferenceGroup, GroupError> {
    let coarse = coarse_group(target_id, emb, manifest, cfg)?;
    let ranked = fine_rank(target_id, &coarse, |id| manifest.get(id).map(|i| &i.scene_graph))?;
    select_references(target_id, &ranked, cfg)
}

/// Builds groups for every image (in manifest order), in parallel.
/// Targets are independent, so one image may serve in many groups.
pub fn build_groups(
    manifest: &DatasetManifest,
    emb: &EmbeddingTable,
    cfg: &GroupBuildConfig,
) -> Result<Vec<ReferenceGroup>, GroupError> {
    cfg.validate()?;
    manifest.images().par_iter().map(|img| build_group(&img.id, emb, manifest, cfg)).collect()
}

/// Lexicon-driven scene graph of one caption: lexicon objects in order of
/// first mention, each taking an attribute token that immediately precedes
/// one of its mentions. Repeated mentions merge into one object.
pub fn fallback_extract<O, A>(caption: &TokenSeq, object_lexicon: &[O], attribute_lexicon: &[A]) -> SceneGraph
where
    O: AsRef<str>,
    A: AsRef<str>,
{
    extract_from_captions(std::slice::from_ref(caption), object_lexicon, attribute_lexicon)
}

/// Merges the fallback parses of several captions of one image.
pub fn extract_from_captions<O, A>(captions: &[TokenSeq], object_lexicon: &[O], attribute_lexicon: &[A]) -> SceneGraph
where
    O: AsRef<str>,
    A: AsRef<str>,
{
    let is_object = |t: &str| object_lexicon.iter().any(|o| o.as_ref() == t);
    let is_attribute = |t: &str| attribute_lexicon.iter().any(|a| a.as_ref() == t);
    let mut order: Vec<String> = Vec::new();
    let mut attrs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for caption in captions {
        let toks = caption.tokens();
        for (i, t) in toks.iter().enumerate() {
            if !is_object(t) {
                continue;
            }
            let entry = attrs.entry(t.clone()).or_insert_with(|| {
                order.push(t.clone());
                Vec::new()
            });
            if let Some(prev) = i.checked_sub(1).map(|j| &toks[j]) {
                if is_attribute(prev) {
                    entry.push(prev.clone());
                }
            }
        }
    }
    SceneGraph::new(order.iter().map(|c| SceneObject::new(c, &attrs[c])).collect())
}

pub fn write_groups<W: Write>(groups: &[ReferenceGroup], mut w: W) -> Result<(), GroupError> {
    serde_json::to_writer_pretty(&mut w, groups)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn save_groups(groups: &[ReferenceGroup], path: &Path) -> Result<(), GroupError> {
    write_groups(groups, BufWriter::new(File::create(path)?))
}

/// Loads and validates a groups file; target ids must be unique.
pub fn load_groups(path: &Path) -> Result<Vec<ReferenceGroup>, GroupError> {
    let groups: Vec<ReferenceGroup> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let mut seen = HashSet::new();
    for g in &groups {
        g.validate()?;
        if !seen.insert(g.target.as_str()) {
            return Err(GroupError::InvalidGroup { target: g.target.clone(), message: "duplicate target".into() });
        }
    }
    Ok(groups)
}

/// Checks that every id a group mentions exists in the manifest.
pub fn check_against_manifest(groups: &[ReferenceGroup], manifest: &DatasetManifest) -> Result<(), GroupError> {
    for g in groups {
        let pool = g.pool.iter().flatten();
        for id in std::iter::once(&g.target).chain(&g.references).chain(pool) {
            if manifest.get(id).is_none() {
                return Err(GroupError::UnknownImage(id.clone()));
            }
        }
    }
    Ok(())
}
