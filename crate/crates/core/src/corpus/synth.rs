use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetManifest, EmbeddingTable, ImageRecord, SceneGraph, SceneObject, Split};
use crate::metrics::tokenize;
use crate::tensor::Tensor;

pub const CATEGORIES: [&str; 16] = [
    "towel",
    "toilet",
    "sink",
    "mirror",
    "dog",
    "cat",
    "car",
    "bus",
    "tree",
    "bench",
    "helmet",
    "motorcycle",
    "road",
    "sofa",
    "lamp",
    "table",
];
pub const SCENES: [&str; 6] = ["bathroom", "street", "park", "kitchen", "bedroom", "garage"];
pub const ATTRIBUTES: [&str; 10] =
    ["red", "blue", "green", "pink", "white", "black", "yellow", "small", "large", "wooden"];
/// Caption words left out of the hashed text embeddings.
pub const STOPWORDS: [&str; 10] = ["a", "an", "the", "with", "and", "in", "there", "is", "this", "has"];

const SCENE_OFFSET: usize = CATEGORIES.len();
const ATTRIBUTE_OFFSET: usize = SCENE_OFFSET + SCENES.len() + 2;
const LAYOUT_DIM: usize = ATTRIBUTE_OFFSET + ATTRIBUTES.len();

pub fn image_key(id: &str) -> String {
    format!("img:{id}")
}

pub fn caption_key(id: &str, caption: usize) -> String {
    format!("txt:{id}:{caption}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Chance that an object carries one color or size attribute.
    pub attribute_prob: f64,
    pub captions_per_image: usize,
    /// Images per family; a family shares its scene and most categories.
    pub family_size: usize,
    /// Chance that a family member swaps one shared category for another.
    pub swap_prob: f64,
    pub d_feat: usize,
    pub d_emb: usize,
    /// Standard deviation of the Gaussian noise added to region features.
    pub noise: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_objects: 2,
            max_objects: 4,
            attribute_prob: 0.6,
            captions_per_image: 5,
            family_size: 5,
            swap_prob: 0.3,
            d_feat: 64,
            d_emb: 64,
            noise: 0.05,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        if self.min_objects == 0 {
            return bad("min_objects must be at least 1".into());
        }
        if self.max_objects < self.min_objects || self.max_objects > CATEGORIES.len() {
            return bad(format!("max_objects must lie in {}..={}", self.min_objects, CATEGORIES.len()));
        }
        if self.captions_per_image == 0 || self.family_size == 0 {
            return bad("captions_per_image and family_size must be at least 1".into());
        }
        for (name, p) in [("attribute_prob", self.attribute_prob), ("swap_prob", self.swap_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.d_feat < LAYOUT_DIM {
            return bad(format!("d_feat must be at least {LAYOUT_DIM}"));
        }
        if self.d_emb == 0 {
            return bad("d_emb must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative number".into());
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(v >= 0.0 && t >= 0.0 && v + t < 1.0) {
            return bad("val_fraction and test_fraction must be non-negative and sum below 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedObject {
    pub category: String,
    pub attribute: Option<String>,
}

impl PlannedObject {
    pub fn new(category: &str, attribute: Option<&str>) -> Self {
        Self { category: category.to_string(), attribute: attribute.map(str::to_string) }
    }
}

/// Content of one synthetic image before rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePlan {
    pub scene: String,
    pub objects: Vec<PlannedObject>,
}

impl ImagePlan {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        if !SCENES.contains(&self.scene.as_str()) {
            return bad(format!("unknown scene {:?}", self.scene));
        }
        if self.objects.is_empty() {
            return bad("an image needs at least one object".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !CATEGORIES.contains(&o.category.as_str()) {
                return bad(format!("unknown category {:?}", o.category));
            }
            if self.objects[..i].iter().any(|p| p.category == o.category) {
                return bad(format!("category {:?} planted twice", o.category));
            }
            if let Some(a) = &o.attribute {
                if !ATTRIBUTES.contains(&a.as_str()) {
                    return bad(format!("unknown attribute {a:?}"));
                }
            }
        }
        Ok(())
    }

    /// Image-side tokens: the scene, every category and every attribute.
    fn tokens(&self) -> Vec<&str> {
        let mut t = vec![self.scene.as_str()];
        for o in &self.objects {
            t.push(&o.category);
            t.extend(o.attribute.as_deref());
        }
        t
    }
}

fn index_of(list: &[&str], word: &str) -> usize {
    list.iter().position(|w| *w == word).expect("word validated against lexicon")
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unnormalized bag-of-tokens count vector; stopwords are skipped.
fn hash_embedding<'a, I: IntoIterator<Item = &'a str>>(tokens: I, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens {
        if !STOPWORDS.contains(&t) {
            v[(fnv1a(t) % dim as u64) as usize] += 1.0;
        }
    }
    v
}

fn phrase(o: &PlannedObject) -> String {
    match &o.attribute {
        Some(a) => format!("a {a} {}", o.category),
        None => format!("a {}", o.category),
    }
}

fn caption<R: Rng>(plan: &ImagePlan, rng: &mut R) -> String {
    let mut objs: Vec<&PlannedObject> = plan.objects.iter().collect();
    objs.shuffle(rng);
    let phrases: Vec<String> = objs.into_iter().map(phrase).collect();
    let list = match phrases.split_last() {
        Some((last, [])) => last.clone(),
        Some((last, init)) => format!("{} and {last}", init.join(" ")),
        None => String::new(),
    };
    let scene = &plan.scene;
    match rng.random_range(0..4) {
        0 => format!("a {scene} with {list}"),
        1 => format!("{list} in a {scene}"),
        2 => format!("there is {list} in the {scene}"),
        _ => format!("this {scene} has {list}"),
    }
}

/// Embedding vectors with their table keys.
pub type KeyedVectors = Vec<(String, Vec<f64>)>;

/// Renders one planned image: captions, scene graph, region features and
/// its image plus caption embeddings (unnormalized, keyed as in the table).
pub fn render_image<R: Rng>(
    id: &str,
    split: Split,
    plan: &ImagePlan,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<(ImageRecord, KeyedVectors), CorpusError> {
    cfg.validate()?;
    plan.validate()?;
    let captions: Vec<String> = (0..cfg.captions_per_image).map(|_| caption(plan, rng)).collect();
    let objects =
        plan.objects.iter().map(|o| SceneObject::new(&o.category, o.attribute.as_deref())).collect::<Vec<_>>();

    let noise = Normal::new(0.0, cfg.noise).map_err(|e| CorpusError::InvalidConfig(e.to_string()))?;
    let rows = plan.objects.len() + 1;
    let mut features = Tensor::zeros(rows, cfg.d_feat);
    features.row_mut(0)[SCENE_OFFSET + index_of(&SCENES, &plan.scene)] = 1.0;
    for (r, o) in plan.objects.iter().enumerate() {
        let row = features.row_mut(r + 1);
        row[index_of(&CATEGORIES, &o.category)] = 1.0;
        if let Some(a) = &o.attribute {
            row[ATTRIBUTE_OFFSET + index_of(&ATTRIBUTES, a)] = 1.0;
        }
    }
    for x in features.data_mut() {
        *x += noise.sample(rng);
    }

    let mut embeddings = vec![(image_key(id), hash_embedding(plan.tokens(), cfg.d_emb))];
    for (i, c) in captions.iter().enumerate() {
        let toks = tokenize(c);
        embeddings.push((caption_key(id, i), hash_embedding(toks.iter(), cfg.d_emb)));
    }
    let record = ImageRecord {
        id: id.to_string(),
        split,
        captions,
        features,
        scene_graph: SceneGraph::new(objects),
        embedding_key: image_key(id),
    };
    Ok((record, embeddings))
}

fn family_plans<R: Rng>(size: usize, cfg: &SynthConfig, rng: &mut R) -> Vec<ImagePlan> {
    let scene = SCENES.choose(rng).unwrap().to_string();
    let k = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let base: Vec<&str> = CATEGORIES.choose_multiple(rng, k).copied().collect();
    (0..size)
        .map(|_| {
            let mut cats = base.clone();
            if rng.random_bool(cfg.swap_prob) {
                let others: Vec<&str> = CATEGORIES.iter().copied().filter(|c| !cats.contains(c)).collect();
                if let Some(&new) = others.choose(rng) {
                    let slot = rng.random_range(0..cats.len());
                    cats[slot] = new;
                }
            }
            let objects = cats
                .into_iter()
                .map(|c| {
                    let attr = rng.random_bool(cfg.attribute_prob).then(|| *ATTRIBUTES.choose(rng).unwrap());
                    PlannedObject::new(c, attr)
                })
                .collect();
            ImagePlan { scene: scene.clone(), objects }
        })
        .collect()
}

fn family_splits<R: Rng>(families: usize, cfg: &SynthConfig, rng: &mut R) -> Vec<Split> {
    let n_test = (families as f64 * cfg.test_fraction).round() as usize;
    let n_val = (families as f64 * cfg.val_fraction).round() as usize;
    let n_test = n_test.min(families.saturating_sub(1));
    let n_val = n_val.min(families.saturating_sub(1 + n_test));
    let mut splits: Vec<Split> = (0..families)
        .map(|f| {
            if f < n_test {
                Split::Test
            } else if f < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect();
    splits.shuffle(rng);
    splits
}

/// Deterministic synthetic corpus: families of images share a scene and
/// most object categories but differ in attributes. Splits are assigned
/// per family so no family straddles two splits.
pub fn synth_corpus(
    seed: u64,
    n_images: usize,
    cfg: &SynthConfig,
) -> Result<(DatasetManifest, EmbeddingTable), CorpusError> {
    cfg.validate()?;
    if n_images < 2 {
        return Err(CorpusError::InvalidConfig(format!("n_images must be at least 2, got {n_images}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = n_images.div_ceil(cfg.family_size);
    let splits = family_splits(families, cfg, &mut rng);
    let mut images = Vec::with_capacity(n_images);
    let mut table = EmbeddingTable::new(cfg.d_emb);
    for (f, split) in splits.into_iter().enumerate() {
        let size = cfg.family_size.min(n_images - f * cfg.family_size);
        for plan in family_plans(size, cfg, &mut rng) {
            let id = format!("img{:05}", images.len());
            let (record, embeddings) = render_image(&id, split, &plan, cfg, &mut rng)?;
            for (key, v) in embeddings {
                table.insert(&key, &v)?;
            }
            images.push(record);
        }
    }
    Ok((DatasetManifest::new(images, None)?, table))
}
