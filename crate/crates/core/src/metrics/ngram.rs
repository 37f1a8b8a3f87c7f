use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::TokenSeq;

/// Highest n-gram order used by BLEU-4, CIDEr and DisCIDEr.
pub const MAX_N: usize = 4;

/// Counts of the order-`n` n-grams of `tokens`, keyed by the space-joined n-gram.
pub fn ngram_counts(tokens: &TokenSeq, n: usize) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    let t = tokens.tokens();
    if n == 0 || t.len() < n {
        return counts;
    }
    for w in t.windows(n) {
        *counts.entry(w.join(" ")).or_insert(0) += 1;
    }
    counts
}

/// Distinct n-grams of orders `1..=MAX_N` across a set of captions.
pub(crate) fn ngram_set<'a, I>(captions: I) -> [BTreeSet<String>; MAX_N]
where
    I: IntoIterator<Item = &'a TokenSeq>,
{
    let mut sets: [BTreeSet<String>; MAX_N] = Default::default();
    for cap in captions {
        for (n, set) in sets.iter_mut().enumerate() {
            set.extend(ngram_counts(cap, n + 1).into_keys());
        }
    }
    sets
}

/// Document frequencies over a corpus where one image is one document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DfTable {
    df: [HashMap<String, u32>; MAX_N],
    corpus_size: usize,
}

impl DfTable {
    /// Builds the table from each image's ground-truth captions. An image
    /// counts once per n-gram regardless of how many captions contain it.
    pub fn from_images<'a, I>(images: I) -> Self
    where
        I: IntoIterator<Item = &'a [TokenSeq]>,
    {
        let mut table = DfTable::default();
        for captions in images {
            table.corpus_size += 1;
            let sets = ngram_set(captions);
            for (n, set) in sets.into_iter().enumerate() {
                for g in set {
                    *table.df[n].entry(g).or_insert(0) += 1;
                }
            }
        }
        table
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    /// Number of images whose captions contain `ngram` (of order `n`).
    pub fn df(&self, ngram: &str, n: usize) -> u32 {
        self.df.get(n - 1).and_then(|m| m.get(ngram)).copied().unwrap_or(0)
    }

    /// `ln(|I| / max(1, df))`.
    pub fn idf(&self, ngram: &str, n: usize) -> f64 {
        let df = self.df(ngram, n).max(1) as f64;
        (self.corpus_size as f64 / df).ln()
    }

    /// Number of distinct n-grams of order `n` seen in the corpus.
    pub fn vocabulary_size(&self, n: usize) -> usize {
        self.df[n - 1].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn counts_overlapping_windows() {
        let c = ngram_counts(&tokenize("a a a b"), 2);
        assert_eq!(c.get("a a"), Some(&2));
        assert_eq!(c.get("a b"), Some(&1));
        assert!(ngram_counts(&tokenize("a b"), 3).is_empty());
    }

    #[test]
    fn df_counts_each_image_once() {
        let a = vec![tokenize("a pink towel"), tokenize("pink pink towel")];
        let b = vec![tokenize("a white toilet")];
        let df = DfTable::from_images([a.as_slice(), b.as_slice()]);
        assert_eq!(df.corpus_size(), 2);
        assert_eq!(df.df("pink", 1), 1);
        assert_eq!(df.df("a", 1), 2);
        assert_eq!(df.idf("a", 1), 0.0);
        assert!((df.idf("unseen", 1) - 2f64.ln()).abs() < 1e-15);
    }
}
