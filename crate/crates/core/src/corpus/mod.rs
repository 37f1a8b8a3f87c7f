//! Dataset manifests, embedding tables and the synthetic corpus generator.

mod embeddings;
mod manifest;
mod synth;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::metrics::{tokenize, DfTable, TokenSeq};
use crate::tensor::Tensor;

pub use embeddings::{load_embeddings, EmbeddingTable};
pub use manifest::{load_manifest, read_manifest, write_manifest};
pub use synth::{
    caption_key, image_key, render_image, synth_corpus, ImagePlan, KeyedVectors, PlannedObject, SynthConfig,
    ATTRIBUTES, CATEGORIES, SCENES, STOPWORDS,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image {id:?}: feature dimension {found} does not match {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("image {id:?}: {message}")]
    InvalidImage { id: String, message: String },
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("embedding file truncated: {0}")]
    Truncated(String),
    #[error("embedding {0:?} is a zero vector")]
    ZeroEmbedding(String),
    #[error("embedding format: {0}")]
    Format(String),
    #[error("invalid synthetic corpus config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeSet<String>,
}

impl SceneObject {
    pub fn new<I, S>(category: &str, attributes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            category: category.trim().to_lowercase(),
            attributes: attributes.into_iter().map(|a| a.as_ref().trim().to_lowercase()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation(pub usize, pub String, pub usize);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub relations: Vec<Relation>,
}

impl SceneGraph {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Self { objects, relations: Vec::new() }
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.category.as_str()).collect()
    }

    /// `(category, attribute)` pairs; attributes of repeated categories are pooled.
    pub fn attribute_pairs(&self) -> BTreeSet<(&str, &str)> {
        self.objects.iter().flat_map(|o| o.attributes.iter().map(move |a| (o.category.as_str(), a.as_str()))).collect()
    }

    pub fn attribute_count(&self) -> usize {
        self.objects.iter().map(|o| o.attributes.len()).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        for o in &self.objects {
            if o.category.is_empty() {
                return Err("empty object category".into());
            }
            if o.category != o.category.to_lowercase() || o.category.trim() != o.category {
                return Err(format!("category {:?} is not normalized", o.category));
            }
        }
        let n = self.objects.len();
        for Relation(s, p, o) in &self.relations {
            if *s >= n || *o >= n {
                return Err(format!("relation ({s}, {p:?}, {o}) out of range for {n} objects"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub split: Split,
    pub captions: Vec<String>,
    pub features: Tensor,
    pub scene_graph: SceneGraph,
    pub embedding_key: String,
}

impl ImageRecord {
    pub fn tokenized_captions(&self) -> Vec<TokenSeq> {
        self.captions.iter().map(|c| tokenize(c)).collect()
    }

    pub fn num_proposals(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::InvalidImage { id: self.id.clone(), message };
        if self.id.is_empty() {
            return Err(invalid("empty image id".into()));
        }
        if self.captions.is_empty() {
            return Err(invalid("no captions".into()));
        }
        if self.captions.iter().any(|c| c.trim().is_empty()) {
            return Err(invalid("empty caption".into()));
        }
        if self.features.rows() == 0 || self.features.cols() == 0 {
            return Err(invalid("no region features".into()));
        }
        if !self.features.is_finite() {
            return Err(invalid("non-finite region feature".into()));
        }
        self.scene_graph.validate().map_err(invalid)
    }
}

/// Images of a dataset with their splits; ids are unique.
#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    images: Vec<ImageRecord>,
    vocab_hint: Option<Vec<String>>,
    index: HashMap<String, usize>,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images && self.vocab_hint == other.vocab_hint
    }
}

impl DatasetManifest {
    /// Validates every image and the shared feature dimension.
    pub fn new(images: Vec<ImageRecord>, vocab_hint: Option<Vec<String>>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(images.len());
        let mut d_feat = None;
        for (i, img) in images.iter().enumerate() {
            img.validate()?;
            let d = img.features.cols();
            match d_feat {
                None => d_feat = Some(d),
                Some(expected) if expected != d => {
                    return Err(CorpusError::DimensionMismatch { id: img.id.clone(), expected, found: d })
                }
                _ => {}
            }
            if index.insert(img.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(img.id.clone()));
            }
        }
        Ok(Self { images, vocab_hint, index })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn vocab_hint(&self) -> Option<&[String]> {
        self.vocab_hint.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.images[i])
    }

    pub fn require(&self, id: &str) -> Result<&ImageRecord, CorpusError> {
        self.get(id).ok_or_else(|| CorpusError::UnknownImage(id.to_string()))
    }

    /// Feature dimension shared by all images (0 for an empty manifest).
    pub fn d_feat(&self) -> usize {
        self.images.first().map_or(0, |i| i.features.cols())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |i| i.split == split)
    }

    /// Document-frequency table over the ground truth of one split, or of all images.
    pub fn build_df(&self, split: Option<Split>) -> DfTable {
        let caps: Vec<Vec<TokenSeq>> = self
            .images
            .iter()
            .filter(|i| split.is_none_or(|s| i.split == s))
            .map(ImageRecord::tokenized_captions)
            .collect();
        DfTable::from_images(caps.iter().map(Vec::as_slice))
    }
}
