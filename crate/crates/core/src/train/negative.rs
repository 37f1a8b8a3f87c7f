use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{match_proposals, TransDic};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLevel {
    #[default]
    Instance,
    Image,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// The negative uses the positive references unchanged.
    None,
    Random,
    #[default]
    SimMask,
    GradAttr,
    ImagePool,
}

/// How the negative sample's reference features are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub level: MaskLevel,
    pub strategy: MaskStrategy,
    /// Cosine cut-off for `sim_mask`, attribution mass for `grad_attr`.
    pub threshold: f64,
    /// Candidate images kept for `image_pool`; must exceed K.
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { level: MaskLevel::Instance, strategy: MaskStrategy::SimMask, threshold: 0.5, pool_size: 0, seed: 0 }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        match self.strategy {
            MaskStrategy::SimMask if self.level != MaskLevel::Instance => {
                bad("sim_mask works at instance level only".into())
            }
            MaskStrategy::ImagePool if self.level != MaskLevel::Image => {
                bad("image_pool works at image level only".into())
            }
            MaskStrategy::SimMask if !(-1.0..=1.0).contains(&self.threshold) => {
                bad(format!("sim_mask threshold {} is outside [-1, 1]", self.threshold))
            }
            MaskStrategy::GradAttr if !(0.0..=1.0).contains(&self.threshold) => {
                bad(format!("grad_attr threshold {} is outside [0, 1]", self.threshold))
            }
            _ => Ok(()),
        }
    }

    /// Checks the pool size against the group size for `image_pool`.
    pub fn validate_pool(&self, k: usize) -> Result<(), TrainError> {
        if self.strategy == MaskStrategy::ImagePool && self.pool_size <= k {
            return Err(TrainError::Config(format!(
                "image_pool needs pool_size > K, got {} with K = {k}",
                self.pool_size
            )));
        }
        Ok(())
    }
}

/// Per reference image, one non-negative score per proposal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributionScores {
    pub per_image: Vec<Vec<f64>>,
}

impl AttributionScores {
    pub fn image_totals(&self) -> Vec<f64> {
        self.per_image.iter().map(|s| s.iter().sum()).collect()
    }

    /// Scores must be finite and match the proposal count of every reference.
    pub fn validate(&self, refs: &[&Tensor]) -> Result<(), TrainError> {
        if self.per_image.len() != refs.len() {
            return Err(TrainError::Attribution(format!(
                "{} score lists for {} references",
                self.per_image.len(),
                refs.len()
            )));
        }
        for (k, (s, r)) in self.per_image.iter().zip(refs).enumerate() {
            if s.len() != r.rows() {
                return Err(TrainError::Attribution(format!(
                    "reference {k} has {} proposals but {} scores",
                    r.rows(),
                    s.len()
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::Attribution(format!("reference {k} has a non-finite score")));
            }
        }
        Ok(())
    }

    /// Externally computed scores: a JSON object from target id to per-image lists.
    pub fn load_map(path: &Path) -> Result<BTreeMap<String, AttributionScores>, TrainError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TrainError::Attribution(format!("{}: {e}", path.display())))
    }
}

/// `|∂ log p(caption | target, refs) / ∂ reference features|`, reduced by
/// the L2 norm over each proposal's feature vector.
pub fn attribution(
    model: &TransDic,
    target: &Tensor,
    refs: &[&Tensor],
    caption: &[usize],
) -> Result<AttributionScores, TrainError> {
    if caption.is_empty() {
        return Err(TrainError::EmptyCaption);
    }
    let mut g = model.graph();
    let t = g.input(target.clone())?;
    let r = refs.iter().map(|x| g.input((*x).clone())).collect::<Result<Vec<_>, _>>()?;
    let enc = model.encode(&mut g, t, &r)?;
    let lp = model.sequence_logprob(&mut g, enc.memory, caption)?;
    let grads = g.tape.backward(lp)?;
    let per_image = r
        .iter()
        .zip(refs)
        .map(|(&v, x)| {
            let gr = grads.get_or_zeros(v, x.shape());
            (0..gr.rows()).map(|i| gr.row(i).iter().map(|a| a * a).sum::<f64>().sqrt()).collect()
        })
        .collect();
    Ok(AttributionScores { per_image })
}

/// Indices of the smallest descending-score prefix whose share of the total
/// reaches `threshold` (ties by index). All-zero scores select nothing.
pub fn top_mass_prefix(scores: &[f64], threshold: f64) -> Vec<usize> {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = Vec::new();
    let mut mass = 0.0;
    for i in order {
        if mass >= threshold {
            break;
        }
        mass += scores[i] / total;
        picked.push(i);
    }
    picked
}

/// Reference proposals whose best cosine with any target proposal, in the
/// model's projected memory space, exceeds `threshold`.
pub fn sim_mask_sets(
    model: &TransDic,
    target: &Tensor,
    refs: &[&Tensor],
    threshold: f64,
) -> Result<Vec<Vec<usize>>, TrainError> {
    let sims = similarity(model, target, refs)?;
    Ok(sims.iter().map(|s| (0..s.rows()).filter(|&i| s.row(i).iter().any(|&c| c > threshold)).collect()).collect())
}

/// `S^k` for every reference image, as used by proposal matching.
pub fn similarity(model: &TransDic, target: &Tensor, refs: &[&Tensor]) -> Result<Vec<Tensor>, TrainError> {
    let mut g = model.graph();
    let t = g.input(target.clone())?;
    let mt = model.project_to_memory(&mut g, t)?;
    let mut mr = Vec::with_capacity(refs.len());
    for r in refs {
        let v = g.input((*r).clone())?;
        mr.push(model.project_to_memory(&mut g, v)?);
    }
    let mr_vals: Vec<&Tensor> = mr.iter().map(|&v| g.value(v)).collect();
    Ok(match_proposals(g.value(mt), &mr_vals).0)
}

/// Inputs available for building one negative sample.
pub struct NegativeInput<'a> {
    pub model: &'a TransDic,
    pub target: &'a Tensor,
    pub refs: &'a [&'a Tensor],
    /// Fine-ranked candidate images for `image_pool`, best first.
    pub pool: &'a [&'a Tensor],
    /// Caption from the positive pass, used by `grad_attr`.
    pub caption: Option<&'a [usize]>,
    /// Precomputed scores that replace the model-internal attribution.
    pub attribution: Option<&'a AttributionScores>,
}

fn zero_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let mut out = t.clone();
    for &i in rows {
        out.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

/// Reference features of the negative sample. The target is never touched.
pub fn make_negative<R: Rng>(input: &NegativeInput, spec: &MaskSpec, rng: &mut R) -> Result<Vec<Tensor>, TrainError> {
    spec.validate()?;
    let refs = input.refs;
    let k = refs.len();
    let whole = |masked: Vec<bool>| {
        refs.iter()
            .zip(masked)
            .map(|(r, m)| if m { zero_rows(r, &(0..r.rows()).collect::<Vec<_>>()) } else { (*r).clone() })
            .collect()
    };
    match (spec.strategy, spec.level) {
        (MaskStrategy::None, _) => Ok(refs.iter().map(|r| (*r).clone()).collect()),
        (MaskStrategy::Random, MaskLevel::Instance) => Ok(refs
            .iter()
            .map(|r| {
                let rows: Vec<usize> = (0..r.rows()).filter(|_| rng.random_bool(0.5)).collect();
                zero_rows(r, &rows)
            })
            .collect()),
        (MaskStrategy::Random, MaskLevel::Image) => Ok(whole((0..k).map(|_| rng.random_bool(0.5)).collect())),
        (MaskStrategy::SimMask, _) => {
            let sets = sim_mask_sets(input.model, input.target, refs, spec.threshold)?;
            Ok(refs.iter().zip(&sets).map(|(r, rows)| zero_rows(r, rows)).collect())
        }
        (MaskStrategy::GradAttr, level) => {
            let computed;
            let scores = match input.attribution {
                Some(s) => s,
                None => {
                    let caption = input.caption.ok_or(TrainError::EmptyCaption)?;
                    computed = attribution(input.model, input.target, refs, caption)?;
                    &computed
                }
            };
            scores.validate(refs)?;
            match level {
                MaskLevel::Instance => Ok(refs
                    .iter()
                    .zip(&scores.per_image)
                    .map(|(r, s)| zero_rows(r, &top_mass_prefix(s, spec.threshold)))
                    .collect()),
                MaskLevel::Image => {
                    let mut masked = vec![false; k];
                    for i in top_mass_prefix(&scores.image_totals(), spec.threshold) {
                        masked[i] = true;
                    }
                    Ok(whole(masked))
                }
            }
        }
        (MaskStrategy::ImagePool, _) => {
            spec.validate_pool(k)?;
            if input.pool.len() < spec.pool_size {
                return Err(TrainError::Config(format!(
                    "image_pool needs {} pool images, the group has {}",
                    spec.pool_size,
                    input.pool.len()
                )));
            }
            let picked = input.pool[..spec.pool_size].choose_multiple(rng, k);
            Ok(picked.map(|t| (*t).clone()).collect())
        }
    }
}
