use std::collections::BTreeMap;

use super::TrainError;
use crate::corpus::{DatasetManifest, Split};
use crate::groups::ReferenceGroup;
use crate::metrics::TokenSeq;
use crate::model::Vocab;
use crate::tensor::Tensor;

/// One target image with its reference group, ready for training or decoding.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub target: Tensor,
    pub refs: Vec<Tensor>,
    /// Fine-ranked pool images, best first; empty when the group has none.
    pub pool: Vec<Tensor>,
    /// Non-empty ground-truth captions as word ids.
    pub captions: Vec<Vec<usize>>,
    pub gt: Vec<TokenSeq>,
}

impl Example {
    pub fn ref_views(&self) -> Vec<&Tensor> {
        self.refs.iter().collect()
    }

    pub fn pool_views(&self) -> Vec<&Tensor> {
        self.pool.iter().collect()
    }
}

/// Examples for every image of `split` that has a group, in manifest order.
pub fn build_examples(
    manifest: &DatasetManifest,
    groups: &BTreeMap<String, ReferenceGroup>,
    split: Split,
    vocab: &Vocab,
) -> Result<Vec<Example>, TrainError> {
    let features = |id: &str| -> Result<Tensor, TrainError> { Ok(manifest.require(id)?.features.clone()) };
    let mut out = Vec::new();
    for img in manifest.split(split) {
        let Some(group) = groups.get(&img.id) else { continue };
        let gt = img.tokenized_captions();
        let captions = gt.iter().filter(|c| !c.is_empty()).map(|c| vocab.encode(c)).collect();
        out.push(Example {
            id: img.id.clone(),
            target: img.features.clone(),
            refs: group.references.iter().map(|r| features(r)).collect::<Result<_, _>>()?,
            pool: group.pool.iter().flatten().map(|r| features(r)).collect::<Result<_, _>>()?,
            captions,
            gt,
        });
    }
    Ok(out)
}
