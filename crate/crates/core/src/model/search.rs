use super::ModelError;

/// Source of next-token log-probabilities for a prefix that starts with BOS.
pub trait StepScorer {
    fn next_logprobs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError>;
}

impl<F> StepScorer for F
where
    F: Fn(&[usize]) -> Result<Vec<f64>, ModelError>,
{
    fn next_logprobs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        self(prefix)
    }
}

/// Special ids and length bound for decoding. `max_len` counts generated
/// tokens including the closing EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpec {
    pub bos: usize,
    pub eos: usize,
    pub banned: Vec<usize>,
    pub max_len: usize,
}

/// A generated sequence (BOS excluded, closing EOS included if emitted)
/// and its total log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn ended(&self, eos: usize) -> bool {
        self.tokens.last() == Some(&eos)
    }
}

fn prefix(spec: &SearchSpec, tokens: &[usize]) -> Vec<usize> {
    let mut p = Vec::with_capacity(tokens.len() + 1);
    p.push(spec.bos);
    p.extend_from_slice(tokens);
    p
}

fn allowed(spec: &SearchSpec, vocab: usize) -> impl Iterator<Item = usize> + '_ {
    (0..vocab).filter(move |t| !spec.banned.contains(t))
}

/// Argmax chain (lowest id on ties) until EOS or `max_len` tokens.
pub fn greedy<S: StepScorer + ?Sized>(scorer: &S, spec: &SearchSpec) -> Result<Hypothesis, ModelError> {
    let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0 };
    while h.tokens.len() < spec.max_len {
        let lp = scorer.next_logprobs(&prefix(spec, &h.tokens))?;
        let mut best: Option<usize> = None;
        for t in allowed(spec, lp.len()) {
            if best.is_none_or(|b| lp[t] > lp[b]) {
                best = Some(t);
            }
        }
        let t = best.ok_or_else(|| ModelError::Config("every token is banned".into()))?;
        h.log_prob += lp[t];
        h.tokens.push(t);
        if t == spec.eos {
            break;
        }
    }
    Ok(h)
}

/// Length-wise beam search without length normalization.
///
/// Each step expands every live hypothesis by every allowed token. Every
/// candidate ending in EOS or reaching `max_len` joins the finished pool;
/// the `width` best of the rest stay live (ties by beam index, then token
/// id). Stops once the best live score cannot beat the `width`-th finished
/// one. Returns up to `width` finished hypotheses, best first.
pub fn beam<S: StepScorer + ?Sized>(
    scorer: &S,
    spec: &SearchSpec,
    width: usize,
) -> Result<Vec<Hypothesis>, ModelError> {
    if width == 0 {
        return Err(ModelError::Config("beam width must be at least 1".into()));
    }
    let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            let lp = scorer.next_logprobs(&prefix(spec, &h.tokens))?;
            cands.extend(allowed(spec, lp.len()).map(|t| (h.log_prob + lp[t], b, t)));
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next = Vec::with_capacity(width);
        for (score, b, t) in cands {
            let done = t == spec.eos || live[b].tokens.len() + 1 >= spec.max_len;
            if !done && next.len() == width {
                continue;
            }
            let mut tokens = live[b].tokens.clone();
            tokens.push(t);
            let h = Hypothesis { tokens, log_prob: score };
            if done {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        finished.sort_by(|x, y| y.log_prob.total_cmp(&x.log_prob));
        // scores only fall as hypotheses grow
        if finished.len() >= width && live.first().is_none_or(|best| best.log_prob <= finished[width - 1].log_prob) {
            break;
        }
    }
    finished.truncate(width);
    Ok(finished)
}
