use rand::Rng;

use super::{Graph, Linear, Mask, ParamStore, TensorError, Var};

/// Multi-head attention projections.
#[derive(Clone, Debug)]
pub struct Mha {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl Mha {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(TensorError::InvalidArgument(format!("d_model {d_model} is not divisible by {n_heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            n_heads,
        })
    }
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per-head attention weights, `queries × keys`.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention per head, concatenated and output-projected.
pub fn multi_head_attention(
    g: &mut Graph,
    mha: &Mha,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Mask>,
) -> Result<AttentionOutput, TensorError> {
    let d_model = g.value(q).cols();
    if !d_model.is_multiple_of(mha.n_heads) {
        return Err(TensorError::InvalidArgument(format!(
            "d_model {d_model} is not divisible by {} heads",
            mha.n_heads
        )));
    }
    let qp = g.linear(&mha.query, q)?;
    let kp = g.linear(&mha.key, k)?;
    let vp = g.linear(&mha.value, v)?;
    let dh = d_model / mha.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(mha.n_heads);
    let mut weights = Vec::with_capacity(mha.n_heads);
    for h in 0..mha.n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if mha.n_heads == 1 {
            (qp, kp, vp)
        } else {
            (g.tape.slice_cols(qp, lo, hi)?, g.tape.slice_cols(kp, lo, hi)?, g.tape.slice_cols(vp, lo, hi)?)
        };
        let scores = g.tape.matmul_t(qh, kh)?;
        let scores = g.tape.scale(scores, scale)?;
        let attn = match mask {
            Some(m) => g.tape.row_softmax_masked(scores, m)?,
            None => g.tape.row_softmax(scores)?,
        };
        heads.push(g.tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let joined = if heads.len() == 1 { heads[0] } else { g.tape.concat_cols(&heads)? };
    let output = g.linear(&mha.output, joined)?;
    Ok(AttentionOutput { output, weights })
}
