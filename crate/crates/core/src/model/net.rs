use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{beam, greedy, Hypothesis, SearchSpec};
use super::vocab::{Vocab, BOS, EOS, PAD, UNK};
use super::{EncoderVariant, ModelConfig, ModelError};
use crate::tensor::{cosine, multi_head_attention, Graph, Linear, Mask, Mha, Norm, ParamId, ParamStore, Tensor, Var};

/// `x ← LN(q + MH(q, kv, kv)); out ← LN(x + FFN(x))`.
#[derive(Clone, Debug)]
struct Block {
    attn: Mha,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            attn: Mha::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ln1: Norm::new(store, &format!("{name}.ln1"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, 4 * d, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * d, d, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), d),
        })
    }

    fn forward(&self, g: &mut Graph, q: Var, kv: Var, mask: Option<&Mask>) -> Result<(Var, Vec<Var>), ModelError> {
        let att = multi_head_attention(g, &self.attn, q, kv, kv, mask)?;
        let h = g.tape.add(q, att.output)?;
        let h = g.norm(&self.ln1, h)?;
        let out = ffn(g, &self.ff1, &self.ff2, &self.ln2, h)?;
        Ok((out, att.weights))
    }
}

fn ffn(g: &mut Graph, ff1: &Linear, ff2: &Linear, ln: &Norm, h: Var) -> Result<Var, ModelError> {
    let f = g.linear(ff1, h)?;
    let f = g.tape.relu(f)?;
    let f = g.linear(ff2, f)?;
    let o = g.tape.add(h, f)?;
    Ok(g.norm(ln, o)?)
}

/// Masked self-attention, cross-attention over the encoder memory, FFN.
#[derive(Clone, Debug)]
struct DecoderBlock {
    self_attn: Mha,
    ln1: Norm,
    cross: Mha,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
    ln3: Norm,
}

impl DecoderBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            self_attn: Mha::new(store, &format!("{name}.self"), d, heads, rng)?,
            ln1: Norm::new(store, &format!("{name}.ln1"), d),
            cross: Mha::new(store, &format!("{name}.cross"), d, heads, rng)?,
            ln2: Norm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, 4 * d, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * d, d, rng),
            ln3: Norm::new(store, &format!("{name}.ln3"), d),
        })
    }

    fn forward(&self, g: &mut Graph, x: Var, memory: Var, causal: &Mask) -> Result<Var, ModelError> {
        let a = multi_head_attention(g, &self.self_attn, x, x, x, Some(causal))?.output;
        let h = g.tape.add(x, a)?;
        let h = g.norm(&self.ln1, h)?;
        let c = multi_head_attention(g, &self.cross, h, memory, memory, None)?.output;
        let h2 = g.tape.add(h, c)?;
        let h2 = g.norm(&self.ln2, h2)?;
        ffn(g, &self.ff1, &self.ff2, &self.ln3, h2)
    }
}

#[derive(Clone, Debug)]
struct RefFlow {
    fuse: Vec<Block>,
    select: Vec<Block>,
}

/// For every reference image `k`, `S^k[i][j] = cos(m^k_i, m^t_j)`, and for
/// every target proposal `j` the argmax reference proposal of each image
/// (lowest index on ties): `tuples[j][k]`.
pub fn match_proposals(m_t: &Tensor, m_refs: &[&Tensor]) -> (Vec<Tensor>, Vec<Vec<usize>>) {
    let n = m_t.rows();
    let sims: Vec<Tensor> = m_refs
        .iter()
        .map(|r| {
            let data = (0..r.rows()).flat_map(|i| (0..n).map(move |j| cosine(r.row(i), m_t.row(j)))).collect();
            Tensor::new(r.rows(), n, data).expect("shape matches data")
        })
        .collect();
    let tuples = (0..n)
        .map(|j| {
            sims.iter()
                .map(|s| {
                    let mut best = 0;
                    for i in 1..s.rows() {
                        if s.at(i, j) > s.at(best, j) {
                            best = i;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    (sims, tuples)
}

/// Encoder results for one target image.
pub struct Encoding {
    /// `M'`: target-flow rows followed by target-reference-flow rows.
    pub memory: Var,
    pub target_memory: Var,
    pub ref_memory: Vec<Var>,
    pub similarity: Vec<Tensor>,
    pub tuples: Vec<Vec<usize>>,
    pub target_flow: Var,
    pub ref_flow: Option<Var>,
    /// Attention weights of every select layer, per head.
    pub select_weights: Vec<Vec<Var>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    vocab: Vec<String>,
}

/// The TransDIC captioning model and its parameters.
#[derive(Clone, Debug)]
pub struct TransDic {
    cfg: ModelConfig,
    store: ParamStore,
    proj_hidden: Linear,
    proj_out: Linear,
    target: Vec<Block>,
    refs: Option<RefFlow>,
    tok_emb: ParamId,
    pos_emb: ParamId,
    decoder: Vec<DecoderBlock>,
    out: Linear,
}

impl TransDic {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, h) = (cfg.d_model, cfg.n_heads);
        let proj_hidden = Linear::new(&mut store, "proj.hidden", cfg.d_feat, d, &mut rng);
        let proj_out = Linear::new(&mut store, "proj.out", d, d, &mut rng);
        let target = (0..cfg.n_layers_target)
            .map(|l| Block::new(&mut store, &format!("target.{l}"), d, h, &mut rng))
            .collect::<Result<_, _>>()?;
        let refs = match cfg.variant {
            EncoderVariant::Full => Some(RefFlow {
                fuse: (0..cfg.n_layers_fuse)
                    .map(|l| Block::new(&mut store, &format!("fuse.{l}"), d, h, &mut rng))
                    .collect::<Result<_, _>>()?,
                select: (0..cfg.n_layers_select)
                    .map(|l| Block::new(&mut store, &format!("select.{l}"), d, h, &mut rng))
                    .collect::<Result<_, _>>()?,
            }),
            EncoderVariant::TargetOnly => None,
        };
        let tok_emb = store.add_xavier("decoder.tok_emb", cfg.vocab_size, d, &mut rng);
        let pos_emb = store.add_xavier("decoder.pos_emb", cfg.max_len, d, &mut rng);
        let decoder = (0..cfg.n_layers_decoder)
            .map(|l| DecoderBlock::new(&mut store, &format!("decoder.{l}"), d, h, &mut rng))
            .collect::<Result<_, _>>()?;
        let out = Linear::new(&mut store, "decoder.out", d, cfg.vocab_size, &mut rng);
        Ok(Self { cfg, store, proj_hidden, proj_out, target, refs, tok_emb, pos_emb, decoder, out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.store)
    }

    /// Row-wise MLP `d_feat → d_model → d_model` with a ReLU in between.
    pub fn project_to_memory(&self, g: &mut Graph, features: Var) -> Result<Var, ModelError> {
        let found = g.value(features).cols();
        if found != self.cfg.d_feat {
            return Err(ModelError::FeatureDim { expected: self.cfg.d_feat, found });
        }
        let h = g.linear(&self.proj_hidden, features)?;
        let h = g.tape.relu(h)?;
        Ok(g.linear(&self.proj_out, h)?)
    }

    /// Self-attention stack over the target proposals.
    pub fn target_flow(&self, g: &mut Graph, m_t: Var) -> Result<Var, ModelError> {
        let mut o = m_t;
        for b in &self.target {
            o = b.forward(g, o, o, None)?.0;
        }
        Ok(o)
    }

    /// Fuse layers run self-attention within each tuple's K reference
    /// features; select layer `l` queries with the target feature over the
    /// tuple's fuse output of layer `l-1`.
    pub fn target_ref_flow(
        &self,
        g: &mut Graph,
        m_t: Var,
        ref_memory: &[Var],
        tuples: &[Vec<usize>],
    ) -> Result<(Var, Vec<Vec<Var>>), ModelError> {
        let flow = self.refs.as_ref().ok_or_else(|| ModelError::Config("model has no target-reference flow".into()))?;
        let k = ref_memory.len();
        if k == 0 {
            return Err(ModelError::Config("the target-reference flow needs at least one reference".into()));
        }
        let n = tuples.len();
        let mut offsets = Vec::with_capacity(k);
        let mut total = 0;
        for &r in ref_memory {
            offsets.push(total);
            total += g.value(r).rows();
        }
        let all = if k == 1 { ref_memory[0] } else { g.tape.concat_rows(ref_memory)? };
        let rows: Vec<usize> =
            tuples.iter().flat_map(|t| t.iter().enumerate().map(|(ki, &i)| offsets[ki] + i)).collect();
        let u0 = g.tape.gather_rows(all, &rows)?;

        let fuse_mask = Mask::block_diagonal(n, k);
        let select_mask = Mask::grouped_keys(n, k);
        let needed = if self.cfg.select_raw_refs { 0 } else { (flow.select.len() - 1).min(flow.fuse.len()) };
        let mut u = vec![u0];
        for b in &flow.fuse[..needed] {
            let prev = *u.last().unwrap();
            u.push(b.forward(g, prev, prev, Some(&fuse_mask))?.0);
        }
        let mut v = m_t;
        let mut weights = Vec::with_capacity(flow.select.len());
        for (l, b) in flow.select.iter().enumerate() {
            let keys = u[l.min(needed)];
            let (out, w) = b.forward(g, v, keys, Some(&select_mask))?;
            v = out;
            weights.push(w);
        }
        Ok((v, weights))
    }

    /// Project, match, run both flows and concatenate.
    pub fn encode(&self, g: &mut Graph, target: Var, refs: &[Var]) -> Result<Encoding, ModelError> {
        let target_memory = self.project_to_memory(g, target)?;
        let ref_memory = refs.iter().map(|&r| self.project_to_memory(g, r)).collect::<Result<Vec<_>, _>>()?;
        let target_flow = self.target_flow(g, target_memory)?;
        if self.refs.is_none() {
            return Ok(Encoding {
                memory: target_flow,
                target_memory,
                ref_memory,
                similarity: Vec::new(),
                tuples: Vec::new(),
                target_flow,
                ref_flow: None,
                select_weights: Vec::new(),
            });
        }
        let (similarity, tuples) = {
            let mt = g.value(target_memory);
            let mr: Vec<&Tensor> = ref_memory.iter().map(|&r| g.value(r)).collect();
            match_proposals(mt, &mr)
        };
        let (ref_flow, select_weights) = self.target_ref_flow(g, target_memory, &ref_memory, &tuples)?;
        let memory = g.tape.concat_rows(&[target_flow, ref_flow])?;
        Ok(Encoding {
            memory,
            target_memory,
            ref_memory,
            similarity,
            tuples,
            target_flow,
            ref_flow: Some(ref_flow),
            select_weights,
        })
    }

    /// Decoder hidden states for `inputs` (which start with BOS).
    fn decoder_hidden(&self, g: &mut Graph, memory: Var, inputs: &[usize]) -> Result<Var, ModelError> {
        let t = inputs.len();
        if t > self.cfg.max_len {
            return Err(ModelError::PrefixTooLong { len: t, max_len: self.cfg.max_len });
        }
        if t == 0 {
            return Err(ModelError::Config("decoder prefix must start with BOS".into()));
        }
        let tok = g.param(self.tok_emb)?;
        let pos = g.param(self.pos_emb)?;
        let e = g.tape.embedding_lookup(tok, inputs)?;
        let positions: Vec<usize> = (0..t).collect();
        let p = g.tape.gather_rows(pos, &positions)?;
        let mut x = g.tape.add(e, p)?;
        let causal = Mask::causal(t);
        for b in &self.decoder {
            x = b.forward(g, x, memory, &causal)?;
        }
        Ok(x)
    }

    /// Log-distribution over the vocabulary after every prefix position.
    pub fn decode_logprobs(&self, g: &mut Graph, memory: Var, prefix: &[usize]) -> Result<Var, ModelError> {
        let h = self.decoder_hidden(g, memory, prefix)?;
        let logits = g.linear(&self.out, h)?;
        Ok(g.tape.log_softmax(logits)?)
    }

    /// Next-token log-probabilities from a precomputed encoder memory.
    pub fn next_logprobs(&self, memory: &Arc<Tensor>, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut g = self.graph();
        let m = g.tape.shared_leaf(Arc::clone(memory))?;
        let h = self.decoder_hidden(&mut g, m, prefix)?;
        let last = g.tape.gather_rows(h, &[prefix.len() - 1])?;
        let logits = g.linear(&self.out, last)?;
        let lp = g.tape.log_softmax(logits)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// Summed log-probability of `tokens` (BOS excluded) under teacher forcing.
    pub fn sequence_logprob(&self, g: &mut Graph, memory: Var, tokens: &[usize]) -> Result<Var, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Config("cannot score an empty sequence".into()));
        }
        let mut inputs = Vec::with_capacity(tokens.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&tokens[..tokens.len() - 1]);
        let lp = self.decode_logprobs(g, memory, &inputs)?;
        let picked = g.tape.pick(lp, tokens)?;
        Ok(g.tape.sum(picked)?)
    }

    /// Teacher-forcing targets for a caption: words (truncated to fit) then EOS.
    pub fn xe_targets(&self, words: &[usize]) -> Vec<usize> {
        let keep = words.len().min(self.cfg.max_len - 1);
        let mut t = words[..keep].to_vec();
        t.push(EOS);
        t
    }

    /// `−Σ_t log P(w_t | w_<t)` over the caption words and the closing EOS.
    pub fn xe_loss(&self, g: &mut Graph, memory: Var, words: &[usize]) -> Result<Var, ModelError> {
        let targets = self.xe_targets(words);
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(&targets[..targets.len() - 1]);
        let h = self.decoder_hidden(g, memory, &inputs)?;
        let logits = g.linear(&self.out, h)?;
        Ok(g.tape.cross_entropy(logits, &targets)?)
    }

    /// Encoder memory as a plain value.
    pub fn memory(&self, target: &Tensor, refs: &[&Tensor]) -> Result<Arc<Tensor>, ModelError> {
        let mut g = self.graph();
        let t = g.input(target.clone())?;
        let r = refs.iter().map(|x| g.input((*x).clone())).collect::<Result<Vec<_>, _>>()?;
        let enc = self.encode(&mut g, t, &r)?;
        Ok(g.tape.shared_value(enc.memory))
    }

    pub fn search_spec(&self) -> SearchSpec {
        SearchSpec { bos: BOS, eos: EOS, banned: vec![PAD, BOS, UNK], max_len: self.cfg.max_len }
    }

    pub fn greedy_from_memory(&self, memory: &Arc<Tensor>) -> Result<Hypothesis, ModelError> {
        greedy(&|p: &[usize]| self.next_logprobs(memory, p), &self.search_spec())
    }

    pub fn beam_from_memory(&self, memory: &Arc<Tensor>, width: usize) -> Result<Vec<Hypothesis>, ModelError> {
        beam(&|p: &[usize]| self.next_logprobs(memory, p), &self.search_spec(), width)
    }

    /// Greedy decoding when `beam` is `None`, otherwise beam search of that width.
    pub fn generate(
        &self,
        target: &Tensor,
        refs: &[&Tensor],
        beam: Option<usize>,
    ) -> Result<Vec<Hypothesis>, ModelError> {
        let memory = self.memory(target, refs)?;
        match beam {
            None => Ok(vec![self.greedy_from_memory(&memory)?]),
            Some(w) => self.beam_from_memory(&memory, w),
        }
    }

    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<(), ModelError> {
        let meta = CheckpointMeta { config: self.cfg.clone(), vocab: vocab.tokens().to_vec() };
        let json = serde_json::to_string(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        self.store.write_checkpoint(BufWriter::new(File::create(path)?), &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Vocab), ModelError> {
        let (store, json) = ParamStore::read_checkpoint(BufReader::new(File::open(path)?))?;
        let meta: CheckpointMeta = serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let vocab = Vocab::from_tokens(meta.vocab).map_err(ModelError::Checkpoint)?;
        if vocab.len() != meta.config.vocab_size {
            return Err(ModelError::Checkpoint("vocabulary size differs from the model config".into()));
        }
        let mut model = Self::new(meta.config, 0)?;
        model.store.load_from(&store)?;
        Ok((model, vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(variant: EncoderVariant) -> TransDic {
        let cfg = ModelConfig {
            d_feat: 6,
            d_model: 8,
            n_layers_target: 2,
            n_layers_select: 2,
            n_layers_fuse: 2,
            n_layers_decoder: 2,
            n_heads: 2,
            vocab_size: 7,
            max_len: 6,
            variant,
            select_raw_refs: false,
        };
        TransDic::new(cfg, 7).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn projection_of_zero_with_zero_bias_is_zero() {
        let m = tiny(EncoderVariant::Full);
        let mut g = m.graph();
        let x = g.input(Tensor::zeros(3, 6)).unwrap();
        let y = m.project_to_memory(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), [3, 8]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let bad = g.input(Tensor::zeros(3, 5)).unwrap();
        assert!(matches!(m.project_to_memory(&mut g, bad), Err(ModelError::FeatureDim { .. })));
    }

    #[test]
    fn matching_picks_the_most_similar_proposal() {
        let target = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let r = Tensor::from_rows(&[[0.0, 1.0], [0.9, 0.1]]).unwrap();
        let (sims, tuples) = match_proposals(&target, &[&r]);
        assert_eq!(tuples, vec![vec![1]]);
        assert!((sims[0].at(1, 0) - 0.9 / (0.82f64).sqrt()).abs() < 1e-12);
        let same = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let (sims, tuples) = match_proposals(&target, &[&same]);
        assert_eq!(tuples, vec![vec![1]]);
        assert_eq!(sims[0].at(1, 0), 1.0);
    }

    #[test]
    fn encoder_output_stacks_both_flows() {
        let m = tiny(EncoderVariant::Full);
        let mut g = m.graph();
        let t = g.input(random(4, 6, 1)).unwrap();
        let refs: Vec<Var> = (0..3).map(|k| g.input(random(2 + k, 6, 10 + k as u64)).unwrap()).collect();
        let enc = m.encode(&mut g, t, &refs).unwrap();
        assert_eq!(g.value(enc.memory).shape(), [8, 8]);
        assert_eq!(g.value(enc.target_flow).shape(), [4, 8]);
        assert_eq!(g.value(enc.ref_flow.unwrap()).shape(), [4, 8]);
        assert_eq!(enc.tuples.len(), 4);
        assert!(enc.tuples.iter().all(|t| t.len() == 3));
    }

    #[test]
    fn single_reference_gets_full_select_weight() {
        let m = tiny(EncoderVariant::Full);
        let mut g = m.graph();
        let x = random(3, 6, 2);
        let t = g.input(x.clone()).unwrap();
        let r = g.input(x).unwrap();
        let enc = m.encode(&mut g, t, &[r]).unwrap();
        assert_eq!(enc.tuples, vec![vec![0], vec![1], vec![2]]);
        for layer in &enc.select_weights {
            for &w in layer {
                let w = g.value(w);
                for j in 0..3 {
                    for c in 0..3 {
                        assert_eq!(w.at(j, c), if c == j { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    #[test]
    fn zeroed_references_leave_the_target_flow_untouched() {
        let m = tiny(EncoderVariant::Full);
        let x = random(3, 6, 3);
        let run = |refs: Vec<Tensor>| {
            let mut g = m.graph();
            let t = g.input(x.clone()).unwrap();
            let r: Vec<Var> = refs.into_iter().map(|r| g.input(r).unwrap()).collect();
            let enc = m.encode(&mut g, t, &r).unwrap();
            (g.value(enc.target_flow).clone(), g.value(enc.ref_flow.unwrap()).clone())
        };
        let (a, ra) = run(vec![random(2, 6, 4), random(3, 6, 5)]);
        let (b, rb) = run(vec![Tensor::zeros(2, 6), Tensor::zeros(3, 6)]);
        assert_eq!(a, b);
        assert_ne!(ra, rb);
    }

    #[test]
    fn permuting_proposals_permutes_flow_rows() {
        let m = tiny(EncoderVariant::Full);
        let x = random(4, 6, 6);
        let perm = [2, 0, 3, 1];
        let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let refs = [random(3, 6, 8), random(2, 6, 9)];
        let run = |t: &Tensor| {
            let mut g = m.graph();
            let tv = g.input(t.clone()).unwrap();
            let r: Vec<Var> = refs.iter().map(|r| g.input(r.clone()).unwrap()).collect();
            let enc = m.encode(&mut g, tv, &r).unwrap();
            g.value(enc.memory).clone()
        };
        let (a, b) = (run(&x), run(&xp));
        for (new, &old) in perm.iter().enumerate() {
            for half in [0, 4] {
                for (u, v) in a.row(half + old).iter().zip(b.row(half + new)) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
        let ra: Vec<&Tensor> = refs.iter().collect();
        assert_eq!(m.generate(&x, &ra, None).unwrap()[0].tokens, m.generate(&xp, &ra, None).unwrap()[0].tokens);
    }

    #[test]
    fn decoder_distributions_are_normalized_and_causal() {
        let m = tiny(EncoderVariant::Full);
        let mut g = m.graph();
        let mem = g.input(random(5, 8, 11)).unwrap();
        let short = m.decode_logprobs(&mut g, mem, &[BOS, 4, 5]).unwrap();
        let long = m.decode_logprobs(&mut g, mem, &[BOS, 4, 5, 6]).unwrap();
        let (s, l) = (g.value(short).clone(), g.value(long).clone());
        for r in 0..3 {
            let total: f64 = s.row(r).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            for (a, b) in s.row(r).iter().zip(l.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(matches!(m.decode_logprobs(&mut g, mem, &[BOS; 7]), Err(ModelError::PrefixTooLong { .. })));
    }

    #[test]
    fn width_one_beam_never_scores_below_greedy() {
        for variant in [EncoderVariant::Full, EncoderVariant::TargetOnly] {
            let m = tiny(variant);
            let mem = m.memory(&random(3, 6, 12), &[&random(2, 6, 13)]).unwrap();
            let g = m.greedy_from_memory(&mem).unwrap();
            let b = m.beam_from_memory(&mem, 1).unwrap();
            assert_eq!(b.len(), 1);
            assert!(b[0].log_prob >= g.log_prob - 1e-12);
            assert!(g.tokens.starts_with(&b[0].tokens[..b[0].tokens.len() - 1]));
            assert!(g.ended(EOS) || g.tokens.len() == 6);
            for h in m.beam_from_memory(&mem, 4).unwrap() {
                assert!(h.ended(EOS) || h.tokens.len() == 6);
                assert!(!h.tokens.iter().any(|t| [PAD, BOS, UNK].contains(t)));
            }
        }
    }

    #[test]
    fn sequence_logprob_matches_decoding_scores() {
        let m = tiny(EncoderVariant::Full);
        let mem = m.memory(&random(3, 6, 14), &[&random(2, 6, 15)]).unwrap();
        for h in m.beam_from_memory(&mem, 3).unwrap() {
            let mut g = m.graph();
            let mv = g.tape.shared_leaf(Arc::clone(&mem)).unwrap();
            let lp = m.sequence_logprob(&mut g, mv, &h.tokens).unwrap();
            assert!((g.value(lp).item().unwrap() - h.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(EncoderVariant::Full);
        let vocab = Vocab::from_words(["a", "b", "c"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path, &vocab).unwrap();
        let (back, v) = TransDic::load(&path).unwrap();
        assert_eq!(v, vocab);
        assert_eq!(back.config(), m.config());
        for id in m.store().ids() {
            assert_eq!(m.store().get(id), back.store().get(id));
        }
    }
}
