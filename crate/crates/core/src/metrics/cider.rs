use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ngram::{ngram_counts, ngram_set, DfTable, MAX_N};
use super::TokenSeq;

/// TF-IDF n-gram vector for one caption: per order, `ω → (h, g)` where `h`
/// is the raw count and `g` the weight.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NGramVector {
    orders: [BTreeMap<String, (u32, f64)>; MAX_N],
    norms: [f64; MAX_N],
}

impl NGramVector {
    /// `g = h / Σh × ln(|I| / max(1, df))` for every n-gram of orders 1..=4.
    pub fn tf_idf(tokens: &TokenSeq, df: &DfTable) -> Self {
        let mut v = NGramVector::default();
        for n in 1..=MAX_N {
            let counts = ngram_counts(tokens, n);
            let total: u32 = counts.values().sum();
            let map = &mut v.orders[n - 1];
            for (gram, h) in counts {
                let tf = h as f64 / total as f64;
                let g = tf * df.idf(&gram, n);
                map.insert(gram, (h, g));
            }
        }
        v.refresh_norms();
        v
    }

    fn refresh_norms(&mut self) {
        for (n, map) in self.orders.iter().enumerate() {
            self.norms[n] = map.values().map(|(_, g)| g * g).sum::<f64>().sqrt();
        }
    }

    /// Multiplies every weight by `factor(ω, n)`.
    pub fn reweight<F: Fn(&str, usize) -> f64>(&mut self, factor: F) {
        for (n, map) in self.orders.iter_mut().enumerate() {
            for (gram, (_, g)) in map.iter_mut() {
                *g *= factor(gram, n + 1);
            }
        }
        self.refresh_norms();
    }

    pub fn weight(&self, gram: &str, n: usize) -> Option<f64> {
        self.orders[n - 1].get(gram).map(|&(_, g)| g)
    }

    pub fn count(&self, gram: &str, n: usize) -> Option<u32> {
        self.orders[n - 1].get(gram).map(|&(h, _)| h)
    }

    pub fn entries(&self, n: usize) -> impl Iterator<Item = (&str, u32, f64)> {
        self.orders[n - 1].iter().map(|(k, &(h, g))| (k.as_str(), h, g))
    }

    /// Cosine between the order-`n` parts of two vectors; 0 if either is zero.
    pub fn cosine(&self, other: &NGramVector, n: usize) -> f64 {
        let (a, b) = (&self.orders[n - 1], &other.orders[n - 1]);
        let (na, nb) = (self.norms[n - 1], other.norms[n - 1]);
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let dot: f64 = small.iter().filter_map(|(k, &(_, g))| large.get(k).map(|&(_, g2)| g * g2)).sum();
        dot / (na * nb)
    }
}

/// DisCIDEr's `m` and `n` constants. The number of reference images `K`
/// comes from the reference group being scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisCiderParams {
    pub m: f64,
    pub n: f64,
}

impl Default for DisCiderParams {
    fn default() -> Self {
        Self { m: 0.8, n: 5.0 }
    }
}

impl DisCiderParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.m > 0.0 && self.n > 0.0) {
            return Err(format!("DisCIDEr m and n must be positive, got m={} n={}", self.m, self.n));
        }
        Ok(())
    }
}

/// N-gram occurrence sets of each reference image's ground-truth captions.
#[derive(Clone, Debug, Default)]
pub struct ReferenceNGrams {
    images: Vec<[BTreeSet<String>; MAX_N]>,
}

impl ReferenceNGrams {
    pub fn new(ref_captions: &[Vec<TokenSeq>]) -> Self {
        Self { images: ref_captions.iter().map(ngram_set).collect() }
    }

    pub fn k(&self) -> usize {
        self.images.len()
    }

    /// Number of reference images with at least one caption containing `gram`.
    pub fn containing(&self, gram: &str, n: usize) -> usize {
        self.images.iter().filter(|sets| sets[n - 1].contains(gram)).count()
    }

    /// `ln((m + K) / (n + Σ_u min(1, Σ_v h(s_u^v))))`.
    pub fn irf(&self, gram: &str, n: usize, p: &DisCiderParams) -> f64 {
        ((p.m + self.k() as f64) / (p.n + self.containing(gram, n) as f64)).ln()
    }
}

/// Inverse reference frequency of one n-gram (order inferred from its word count).
pub fn irf_factor(omega: &str, ref_captions: &[Vec<TokenSeq>], p: &DisCiderParams) -> f64 {
    let n = omega.split(' ').count();
    ReferenceNGrams::new(ref_captions).irf(omega, n, p)
}

/// Ground-truth side of a CIDEr-family score, prepared once per image.
#[derive(Clone, Debug)]
pub struct PreparedRefs {
    vectors: Vec<NGramVector>,
}

impl PreparedRefs {
    pub fn cider(gt: &[TokenSeq], df: &DfTable) -> Self {
        Self { vectors: gt.iter().map(|s| NGramVector::tf_idf(s, df)).collect() }
    }

    /// Target ground truth with every weight scaled by its inverse reference frequency.
    pub fn discider(target_gt: &[TokenSeq], refs: &ReferenceNGrams, df: &DfTable, p: &DisCiderParams) -> Self {
        let vectors = target_gt
            .iter()
            .map(|s| {
                let mut v = NGramVector::tf_idf(s, df);
                v.reweight(|gram, n| refs.irf(gram, n, p));
                v
            })
            .collect();
        Self { vectors }
    }

    pub fn vectors(&self) -> &[NGramVector] {
        &self.vectors
    }

    /// `100 × mean_n mean_i cos(g_n(candidate), g_n(s_i))`.
    pub fn score(&self, candidate: &NGramVector) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=MAX_N {
            let per_n: f64 = self.vectors.iter().map(|r| candidate.cosine(r, n)).sum();
            total += per_n / self.vectors.len() as f64;
        }
        100.0 * total / MAX_N as f64
    }

    pub fn score_tokens(&self, candidate: &TokenSeq, df: &DfTable) -> f64 {
        self.score(&NGramVector::tf_idf(candidate, df))
    }
}

/// Plain CIDEr on the ×100 scale.
pub fn cider(candidate: &TokenSeq, gt: &[TokenSeq], df: &DfTable) -> f64 {
    PreparedRefs::cider(gt, df).score_tokens(candidate, df)
}

/// CIDEr with target ground-truth weights scaled by inverse reference frequency.
/// The candidate's own vector keeps plain TF-IDF weights.
pub fn discider(
    candidate: &TokenSeq,
    target_gt: &[TokenSeq],
    ref_captions: &[Vec<TokenSeq>],
    df: &DfTable,
    p: &DisCiderParams,
) -> f64 {
    let refs = ReferenceNGrams::new(ref_captions);
    PreparedRefs::discider(target_gt, &refs, df, p).score_tokens(candidate, df)
}
